use lorenz_renorm::config::Tolerances;
use lorenz_renorm::construction::{build_example, schedule_combinatorics};
use lorenz_renorm::family::FamilySpec;
use std::time::Instant;

#[test]
#[ignore]
fn scratch_scheduler() {
    let tol = Tolerances::default();
    let spec = FamilySpec::new(0.7, 2.0).unwrap();
    for depth in 1..=3usize {
        let eps = vec![0.1; depth];
        let t0 = Instant::now();
        match schedule_combinatorics(&spec, depth, &eps, &tol) {
            Ok(sch) => {
                println!("depth {depth} took {:?}", t0.elapsed());
                for l in &sch.levels {
                    println!(
                        "  level {} type ({},{}) dir {:?} offset {} theta {:.4} floor {} c' {:.6}",
                        l.level, l.a, l.b, l.direction, l.offset, l.theta, l.k_floor, l.c_prime
                    );
                }
            }
            Err(e) => println!("depth {depth} FAILED after {:?}: {e}", t0.elapsed()),
        }
    }
}

#[test]
#[ignore]
fn scratch_build_depth2() {
    let tol = Tolerances::default();
    let spec = FamilySpec::new(0.7, 2.0).unwrap();
    let eps = vec![0.1; 2];
    let sch = schedule_combinatorics(&spec, 2, &eps, &tol).unwrap();
    let types = sch.types();
    println!("schedule: {types:?}");
    let t0 = Instant::now();
    let state = build_example(&spec, &types, &tol).unwrap();
    println!("build took {:?}", t0.elapsed());
    println!("outcome: {:?}", state.outcome);
    println!("parameters: {:?}", state.parameters);
    println!("chain: {:?}", state.c_prime_chain);
    println!("gap ratios: {:?}", state.gap_ratios);
    for l in &state.levels {
        println!(
            "  level {} ({},{}) box_du {:?} box_dv {:?} island {} vertex {:?} c' {:.6} res {:?} T {:?}",
            l.level, l.a, l.b, l.box_du, l.box_dv, l.box_is_island, l.vertex, l.c_prime, l.residuals, l.return_times
        );
    }
}

#[test]
#[ignore]
fn scratch_flip_level2() {
    let tol = Tolerances::default();
    // reflected surrogate of the level-2 family
    let spec = FamilySpec::new(1.0 - 0.175366, 2.0).unwrap();
    for free in [32u32, 64, 128] {
        match lorenz_renorm::family::flip_offsets(
            &spec,
            lorenz_renorm::family::FlipDirection::Lower,
            &[free],
            &tol,
        ) {
            Ok(rep) => println!(
                "free {free}: n={} m={} theta={:.4} far={:?} near={:?}",
                rep.n, rep.m, rep.theta, rep.measured_far, rep.measured_near
            ),
            Err(e) => println!("free {free}: ERR {e}"),
        }
    }
}

#[test]
#[ignore]
fn scratch_vertex_3283() {
    let tol = Tolerances::default();
    let spec = FamilySpec::new(1.0 - 0.175366, 2.0).unwrap();
    for (a, b) in [(32u32, 83u32), (16, 41), (8, 20)] {
        let t0 = Instant::now();
        match lorenz_renorm::family::full_vertex(&spec, a, b, &tol) {
            Ok(rec) => println!(
                "({a},{b}): vertex complements {:?} c'={:.6} res {:?} took {:?}",
                rec.vertex_complements, rec.c_prime, rec.residuals, t0.elapsed()
            ),
            Err(e) => println!("({a},{b}): ERR {e} after {:?}", t0.elapsed()),
        }
    }
}
