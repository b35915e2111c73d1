use lorenz_renorm::family::{full_vertex, FamilySpec};
use lorenz_renorm::measures::{
    acim_half_weights, calibrate_k, half_weights, left_interval_counts, parity_holds,
    parity_weights, pushforward, return_times, winding, MeasureError, MeasureVector,
};
use lorenz_renorm::renorm::cycles_for;
use lorenz_renorm::{Side, StandardLorenzMap, Tolerances};
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;

#[test]
fn winding_matrix_entries_match_the_type() {
    let w = winding(2, 3).unwrap();
    assert_eq!(w.entries(), [[1, 3], [2, 1]]);
    assert!(winding(0, 3).is_err());
    assert!(winding(3, 0).is_err());
}

#[test]
fn level_one_return_times_count_the_return_words() {
    // one pass through the left half plus `a` right excursions, and the
    // mirror for the right half: lengths a+1 and b+1 by word structure
    for (a, b) in [(1u32, 1u32), (2, 3), (7, 2), (13, 13)] {
        let t = return_times(&[(a, b)]).unwrap();
        assert_eq!(
            t.pair(1),
            &(BigUint::from(a + 1), BigUint::from(b + 1)),
            "type ({a},{b})"
        );
    }
}

#[test]
fn two_level_times_match_the_hand_product() {
    let t = return_times(&[(2, 3), (4, 5)]).unwrap();
    assert_eq!(t.pair(0), &(BigUint::one(), BigUint::one()));
    assert_eq!(t.pair(1), &(BigUint::from(3u32), BigUint::from(4u32)));
    // (3 + 4*4, 5*3 + 4)
    assert_eq!(t.pair(2), &(BigUint::from(19u32), BigUint::from(19u32)));
    assert_eq!(t.depth(), 2);
    assert_eq!(t.schedule(), &[(2, 3), (4, 5)]);
    assert_eq!(t.pair_f64(2), (19.0, 19.0));
}

#[test]
fn empty_schedule_keeps_the_base_level() {
    let t = return_times(&[]).unwrap();
    assert_eq!(t.depth(), 0);
    assert_eq!(t.pair(0), &(BigUint::one(), BigUint::one()));
}

proptest! {
    #[test]
    fn return_time_cocycle_matches_a_plain_integer_fold(
        schedule in proptest::collection::vec((1u32..=50, 1u32..=50), 0..=8)
    ) {
        let t = return_times(&schedule).unwrap();
        let mut tm: u128 = 1;
        let mut tp: u128 = 1;
        for (n, &(a, b)) in schedule.iter().enumerate() {
            let next = (tm + a as u128 * tp, b as u128 * tm + tp);
            tm = next.0;
            tp = next.1;
            prop_assert_eq!(
                t.pair(n + 1),
                &(BigUint::from(tm), BigUint::from(tp))
            );
        }
    }

    #[test]
    fn side_counts_follow_the_same_cocycle(
        schedule in proptest::collection::vec((1u32..=50, 1u32..=50), 0..=8)
    ) {
        let counts = left_interval_counts(&schedule).unwrap();
        let times = return_times(&schedule).unwrap();
        let mut lm: u128 = 1;
        let mut lp: u128 = 0;
        prop_assert_eq!(&counts[0], &(BigUint::one(), BigUint::zero()));
        for (n, &(a, b)) in schedule.iter().enumerate() {
            let next = (lm + a as u128 * lp, b as u128 * lm + lp);
            lm = next.0;
            lp = next.1;
            prop_assert_eq!(&counts[n + 1], &(BigUint::from(lm), BigUint::from(lp)));
            // a side count never exceeds the total count
            let (tm, tp) = times.pair(n + 1);
            prop_assert!(&counts[n + 1].0 <= tm);
            prop_assert!(&counts[n + 1].1 <= tp);
        }
    }
}

#[test]
fn first_level_parity_weights_are_simple_ratios() {
    let w = parity_weights(&[(3, 7)]).unwrap();
    assert_eq!(w[0].0, BigRational::one());
    assert_eq!(w[0].1, BigRational::zero());
    assert_eq!(w[1].0, BigRational::new(BigInt::from(1), BigInt::from(4)));
    assert_eq!(w[1].1, BigRational::new(BigInt::from(7), BigInt::from(8)));
}

fn vertex_map(c: f64, alpha: f64, a: u32, b: u32, tol: &Tolerances) -> StandardLorenzMap {
    let spec = FamilySpec::new(c, alpha).unwrap();
    let rec = full_vertex(&spec, a, b, tol).unwrap();
    let (du, dv) = rec.vertex_complements;
    spec.map_at_complements(du, dv).unwrap()
}

#[test]
fn cycle_interval_counts_equal_the_return_times() {
    let tol = Tolerances::default();
    for (a, b) in [(1u32, 1u32), (2, 3), (4, 2)] {
        let f = vertex_map(0.5, 2.0, a, b, &tol);
        let cy = cycles_for(&f, &[(a, b)], 1, &tol).unwrap();
        let (tm, tp) = return_times(&[(a, b)]).unwrap().pair_f64(1);
        assert_eq!(cy[1].minus.len() as f64, tm, "type ({a},{b}) minus");
        assert_eq!(cy[1].plus.len() as f64, tp, "type ({a},{b}) plus");
    }
}

#[test]
fn two_level_cycle_counts_equal_the_return_times() {
    // parameter where the first renormalization lands on its own (1,1)
    // full vertex, so the (1,1),(1,1) schedule solves twice
    let u = 0.8981430460267403;
    let f = StandardLorenzMap::new(0.5, 2.0, u, u).unwrap();
    let tol = Tolerances::default();
    let schedule = [(1u32, 1u32), (1, 1)];
    let cy = cycles_for(&f, &schedule, 2, &tol).unwrap();
    let t = return_times(&schedule).unwrap();
    for (level, lv) in cy.iter().enumerate() {
        let (tm, tp) = t.pair_f64(level);
        assert_eq!(lv.minus.len() as f64, tm, "level {level} minus");
        assert_eq!(lv.plus.len() as f64, tp, "level {level} plus");
    }
}

#[test]
fn geometric_half_weights_match_the_symbolic_counts() {
    let tol = Tolerances::default();
    for (a, b) in [(1u32, 1u32), (2, 3), (4, 2)] {
        let f = vertex_map(0.5, 2.0, a, b, &tol);
        let schedule = [(a, b)];
        let counts = left_interval_counts(&schedule).unwrap();
        let times = return_times(&schedule).unwrap();
        let (tm, tp) = times.pair_f64(1);
        let (lm, lp) = (&counts[1].0, &counts[1].1);
        let lm = lm.to_string().parse::<f64>().unwrap();
        let lp = lp.to_string().parse::<f64>().unwrap();

        let wm = half_weights(&f, &schedule, 1, Side::Left, &tol).unwrap();
        let wp = half_weights(&f, &schedule, 1, Side::Right, &tol).unwrap();
        assert_eq!(wm.0, lm / tm, "type ({a},{b}) minus left");
        assert_eq!(wm.1, 1.0 - lm / tm);
        assert_eq!(wp.0, lp / tp, "type ({a},{b}) plus left");
        assert_eq!(wp.1, 1.0 - lp / tp);
    }
}

#[test]
fn level_zero_half_weights_are_degenerate() {
    let f = StandardLorenzMap::new(0.5, 2.0, 1.0, 1.0).unwrap();
    let tol = Tolerances::default();
    assert_eq!(half_weights(&f, &[], 0, Side::Left, &tol).unwrap(), (1.0, 0.0));
    assert_eq!(half_weights(&f, &[], 0, Side::Right, &tol).unwrap(), (0.0, 1.0));
}

fn rat(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

#[test]
fn pushforward_splits_by_time_weighted_returns() {
    let times = return_times(&[(2, 5)]).unwrap();
    let minus = MeasureVector::basis_minus(1, times.clone()).unwrap();
    let down = pushforward(&minus, 2, 5).unwrap();
    assert_eq!(down.level(), 0);
    // one base minus-return against two base plus-returns
    assert_eq!(down.coefficients(), (&rat(1, 3), &rat(2, 3)));

    let plus = MeasureVector::basis_plus(1, times).unwrap();
    let down = pushforward(&plus, 2, 5).unwrap();
    assert_eq!(down.coefficients(), (&rat(5, 6), &rat(1, 6)));
}

#[test]
fn pushforward_validates_the_collapsed_step() {
    let times = return_times(&[(2, 5)]).unwrap();
    let mv = MeasureVector::basis_minus(1, times.clone()).unwrap();
    assert!(matches!(
        pushforward(&mv, 3, 5),
        Err(MeasureError::InvalidInput(_))
    ));
    let base = MeasureVector::basis_minus(0, times).unwrap();
    assert!(matches!(
        pushforward(&base, 2, 5),
        Err(MeasureError::InvalidInput(_))
    ));
}

#[test]
fn long_excursions_push_the_minus_basis_onto_the_plus_side() {
    let a = 1_000_000u32;
    let times = return_times(&[(a, 1)]).unwrap();
    let mv = MeasureVector::basis_minus(1, times).unwrap();
    let down = pushforward(&mv, a, 1).unwrap();
    assert_eq!(
        down.coefficients().1,
        &rat(a as i64, a as i64 + 1),
        "the plus coefficient is a/(a+1) exactly"
    );
}

#[test]
fn measure_vectors_must_be_convex() {
    let times = return_times(&[(2, 5)]).unwrap();
    assert!(MeasureVector::new(1, rat(1, 2), rat(1, 3), times.clone()).is_err());
    assert!(MeasureVector::new(1, rat(3, 2), rat(-1, 2), times.clone()).is_err());
    assert!(MeasureVector::new(2, rat(1, 2), rat(1, 2), times).is_err());
}

proptest! {
    #[test]
    fn pushforward_preserves_exact_convexity(
        schedule in proptest::collection::vec((1u32..=20, 1u32..=20), 1..=5),
        p in 0i64..=13,
        q in 1i64..=13,
    ) {
        prop_assume!(p <= q);
        let times = return_times(&schedule).unwrap();
        let x = rat(p, q);
        let y = BigRational::one() - &x;
        let mut mv = MeasureVector::new(schedule.len(), x, y, times).unwrap();
        for level in (0..schedule.len()).rev() {
            let (a, b) = schedule[level];
            mv = pushforward(&mv, a, b).unwrap();
            let (x, y) = mv.coefficients();
            prop_assert_eq!(mv.level(), level);
            prop_assert!(x >= &BigRational::zero());
            prop_assert!(y >= &BigRational::zero());
            prop_assert_eq!(x + y, BigRational::one());
        }
    }
}

#[test]
fn calibration_reproduces_the_doubling_goldens() {
    let tol = Tolerances::default();
    let ks = calibrate_k(2.0, 0.5, 0.1, 3, &tol).unwrap();
    assert_eq!(ks, vec![16, 32, 64]);
    let schedule: Vec<(u32, u32)> = ks.iter().map(|&k| (k, k)).collect();
    assert!(parity_holds(&schedule, 0.1).unwrap());

    // a loose tolerance is satisfied by very small entries
    let ks = calibrate_k(2.0, 0.5, 0.5, 3, &tol).unwrap();
    assert_eq!(ks, vec![1, 1, 1]);
    assert!(ks.iter().all(|&k| k <= 4));
}

#[test]
fn calibration_is_prefix_stable() {
    let tol = Tolerances::default();
    let deep = calibrate_k(2.0, 0.5, 0.1, 3, &tol).unwrap();
    let shallow = calibrate_k(2.0, 0.5, 0.1, 2, &tol).unwrap();
    assert_eq!(&deep[..2], &shallow[..]);
    assert!(deep.windows(2).all(|w| w[0] <= w[1]), "bounds grow with depth: {deep:?}");
    // one more level at this tolerance needs entries near 512, pushing the
    // return times past the default cap
    assert!(matches!(
        calibrate_k(2.0, 0.5, 0.1, 4, &tol),
        Err(MeasureError::Infeasible { level: 4, .. })
    ));
}

#[test]
fn calibration_rejects_bad_inputs() {
    let tol = Tolerances::default();
    assert!(calibrate_k(1.0, 0.5, 0.1, 3, &tol).is_err());
    assert!(calibrate_k(2.0, 1.0, 0.1, 3, &tol).is_err());
    assert!(calibrate_k(2.0, 0.5, 0.0, 3, &tol).is_err());
    assert!(calibrate_k(2.0, 0.5, 0.6, 3, &tol).is_err());
    assert!(calibrate_k(2.0, 0.5, 0.1, 0, &tol).is_err());
}

#[test]
fn calibration_reports_infeasibility_against_the_time_cap() {
    let tol = Tolerances {
        return_time_cap: 200,
        ..Tolerances::default()
    };
    match calibrate_k(2.0, 0.5, 0.01, 2, &tol) {
        Err(MeasureError::Infeasible { level, cap }) => {
            assert_eq!(level, 2);
            assert_eq!(cap, 200);
        }
        other => panic!("expected an infeasibility report, got {other:?}"),
    }
}

#[test]
fn acim_weights_are_balanced_for_the_symmetric_full_map() {
    let f = StandardLorenzMap::new(0.5, 2.0, 1.0, 1.0).unwrap();
    let est = acim_half_weights(&f, 7).unwrap();
    assert!(
        (est.left - 0.5).abs() <= 0.02,
        "left weight {} strays from 1/2",
        est.left
    );
    assert_eq!(est.right, 1.0 - est.left);
    assert!(est.half_width <= 0.02);
}

#[test]
fn acim_weights_shift_with_the_critical_point() {
    let f = StandardLorenzMap::new(0.6, 2.0, 1.0, 1.0).unwrap();
    let est = acim_half_weights(&f, 11).unwrap();
    assert!(est.left >= 0.05, "left weight {} vanished", est.left);
    assert!(est.right >= 0.05, "right weight {} vanished", est.right);
    assert!(est.half_width <= 0.02);
}

#[test]
fn acim_estimates_are_deterministic_per_seed() {
    let f = StandardLorenzMap::new(0.5, 2.0, 1.0, 1.0).unwrap();
    let a = acim_half_weights(&f, 42).unwrap();
    let b = acim_half_weights(&f, 42).unwrap();
    assert_eq!(a.left, b.left);
    assert_eq!(a.half_width, b.half_width);
    let c = acim_half_weights(&f, 43).unwrap();
    assert!((a.left - c.left).abs() <= 0.04, "seeds disagree beyond tolerance");
}

#[test]
fn acim_estimation_requires_a_full_map() {
    let f = StandardLorenzMap::new(0.5, 2.0, 0.98, 1.0).unwrap();
    assert!(matches!(
        acim_half_weights(&f, 1),
        Err(MeasureError::InvalidInput(_))
    ));
}
