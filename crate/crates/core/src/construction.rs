//! Staged construction of maps renormalizable to a prescribed depth.
//!
//! Three stages mirror how such examples are built. A scheduler walks down
//! level by level: at each level it calibrates an integer offset against
//! the slope-ratio line so the rescaled critical point flips to the far
//! side, keeping both type entries large enough that the cycle parity
//! weights meet the requested per-level bounds. A nested solver then pins
//! the two family parameters where every scheduled level is exactly full.
//! Orbit statistics over the finished map exhibit the side-frequency
//! oscillation the combinatorics was chosen to produce.

use crate::config::Tolerances;
use crate::family::{self, FamilyError, FamilySpec, FlipDirection};
use crate::map::{MapError, StandardLorenzMap};
use crate::measures::{self, MeasureError};
use crate::renorm::{self, RenormError, ScheduledMap};
use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConstructionError {
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    Renorm(#[from] RenormError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("construction infeasible at level {level}: {why}")]
    Infeasible { level: usize, why: String },
    #[error("orbit sampling stalled: {0}")]
    Sampling(String),
}

/// One scheduled level: the chosen return type together with the flip
/// calibration that produced it and the parity floor it had to respect.
#[derive(Debug, Clone, Serialize)]
pub struct ScheduledLevel {
    pub level: usize,
    pub a: u32,
    pub b: u32,
    /// which way this level sends the rescaled critical point
    pub direction: FlipDirection,
    /// integer offset below the slope line picked by the calibration
    pub offset: i32,
    /// slope ratio of the surrogate family at this level
    pub theta: f64,
    /// lower bound on the type entries from the parity calibration
    pub k_floor: u32,
    /// rescaled critical point measured on the surrogate vertex; the next
    /// level's surrogate family is centered here
    pub c_prime: f64,
}

/// A full combinatorial plan: one flip-calibrated type per level.
#[derive(Debug, Clone, Serialize)]
pub struct CombinatoricsSchedule {
    pub levels: Vec<ScheduledLevel>,
    /// per-level parity bounds the plan was calibrated against
    pub eps: Vec<f64>,
}

impl CombinatoricsSchedule {
    pub fn types(&self) -> Vec<(u32, u32)> {
        self.levels.iter().map(|l| (l.a, l.b)).collect()
    }
}

/// Exact parity check of the deepest level of `types` against `eps`:
/// odd levels want the minus side light, even levels the plus side.
fn parity_level_ok(types: &[(u32, u32)], eps: f64) -> Result<bool, MeasureError> {
    let w = measures::parity_weights(types)?;
    let n = types.len();
    let (wm, wp) = &w[n];
    let eps = BigRational::from_float(eps).expect("parity bound is finite");
    let heavy = BigRational::one() - &eps;
    Ok(if n % 2 == 1 {
        *wm <= eps && *wp >= heavy
    } else {
        *wm >= heavy && *wp <= eps
    })
}

/// Growing the level-`n` entries drives each side's weight toward the
/// other side's weight one level up, so those limits must clear the bound
/// strictly or no entry choice can.
fn parity_level_reachable(types_prefix: &[(u32, u32)], n: usize, eps: f64) -> Result<bool, MeasureError> {
    let w = measures::parity_weights(types_prefix)?;
    let (wm_prev, wp_prev) = &w[n - 1];
    let eps = BigRational::from_float(eps).expect("parity bound is finite");
    let heavy = BigRational::one() - &eps;
    Ok(if n % 2 == 1 {
        *wp_prev < eps && *wm_prev > heavy
    } else {
        *wm_prev < eps && *wp_prev > heavy
    })
}

const SCHEDULE_ATTEMPTS: usize = 10;

/// Plan the combinatorics for `depth` levels of renormalization.
///
/// Level by level, a surrogate family centered at the current rescaled
/// critical point is flip-calibrated: the free type entry starts at the
/// parity floor and the partner entry sits on the slope-ratio line at the
/// calibrated offset, which sends the next critical point into the far
/// band on the opposite side. The free entry doubles until the exact
/// parity weights of the prefix clear the level's bound.
///
/// `eps_sequence` gives one parity bound per level and must be
/// non-increasing; bounds an earlier level cannot support are reported as
/// infeasible rather than silently relaxed.
pub fn schedule_combinatorics(
    spec: &FamilySpec,
    depth: usize,
    eps_sequence: &[f64],
    tol: &Tolerances,
) -> Result<CombinatoricsSchedule, ConstructionError> {
    if depth > tol.max_depth {
        return Err(ConstructionError::InvalidInput(format!(
            "depth {depth} exceeds the cap {}",
            tol.max_depth
        )));
    }
    if eps_sequence.len() != depth {
        return Err(ConstructionError::InvalidInput(format!(
            "need one parity bound per level: got {} for depth {depth}",
            eps_sequence.len()
        )));
    }
    for &e in eps_sequence {
        if !(e > 0.0 && e <= 0.5) {
            return Err(ConstructionError::InvalidInput(format!(
                "parity bounds must lie in (0, 1/2], got {e}"
            )));
        }
    }
    if eps_sequence.windows(2).any(|w| w[1] > w[0]) {
        return Err(ConstructionError::InvalidInput(
            "parity bounds must be non-increasing".into(),
        ));
    }
    if depth == 0 {
        return Ok(CombinatoricsSchedule {
            levels: Vec::new(),
            eps: Vec::new(),
        });
    }

    // parity floors: every later level's bound also constrains this level's
    // resolution, so take the worst demand over the remaining ladder
    let mut floors = vec![1u32; depth];
    for (j, &e) in eps_sequence.iter().enumerate() {
        let ladder = measures::calibrate_k(spec.alpha(), spec.c(), e, j + 1, tol).map_err(
            |err| match err {
                MeasureError::Infeasible { level, cap } => ConstructionError::Infeasible {
                    level,
                    why: format!("parity calibration exceeds the return-time cap {cap}"),
                },
                other => ConstructionError::Measure(other),
            },
        )?;
        for (n, &k) in ladder.iter().enumerate() {
            floors[n] = floors[n].max(k);
        }
    }

    let cap = BigUint::from(tol.return_time_cap);
    let mut levels: Vec<ScheduledLevel> = Vec::with_capacity(depth);
    let mut types: Vec<(u32, u32)> = Vec::with_capacity(depth);
    let mut cur_c = spec.c();

    for n in 1..=depth {
        let eps_n = eps_sequence[n - 1];
        let direction = if cur_c >= 2.0 / 3.0 {
            FlipDirection::Lower
        } else if cur_c <= 1.0 / 3.0 {
            FlipDirection::Raise
        } else {
            return Err(ConstructionError::Infeasible {
                level: n,
                why: format!(
                    "critical point {cur_c:.6} of the level-{} return map sits between the flip bands",
                    n - 1
                ),
            });
        };
        if !parity_level_reachable(&types, n, eps_n)? {
            return Err(ConstructionError::Infeasible {
                level: n,
                why: format!(
                    "the resolution of earlier levels caps the parity weights outside the bound {eps_n}"
                ),
            });
        }
        let surrogate = FamilySpec::new(cur_c, spec.alpha())?;

        let mut free = floors[n - 1].max(2);
        let mut chosen = None;
        for _ in 0..SCHEDULE_ATTEMPTS {
            let report = match family::flip_offsets(&surrogate, direction, &[free], tol) {
                Ok(r) => r,
                Err(FamilyError::OffsetNotFound { .. }) => {
                    free = free.saturating_mul(2);
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let partner_raw =
                (report.theta * f64::from(free)).floor() as i64 - i64::from(report.n);
            let Ok(partner) = u32::try_from(partner_raw) else {
                free = free.saturating_mul(2);
                continue;
            };
            if partner < floors[n - 1].max(1) {
                free = free.saturating_mul(2);
                continue;
            }
            // the free entry is the one the flip proposition quantifies
            // over: the a-entry when lowering, the b-entry when raising
            let (a, b) = match direction {
                FlipDirection::Lower => (free, partner),
                FlipDirection::Raise => (partner, free),
            };
            types.push((a, b));
            let times = measures::return_times(&types)?;
            let (tm, tp) = times.pair(n);
            if tm > &cap || tp > &cap {
                return Err(ConstructionError::Infeasible {
                    level: n,
                    why: format!(
                        "parity and the return-time cap {} cannot both be met",
                        tol.return_time_cap
                    ),
                });
            }
            if parity_level_ok(&types, eps_n)? {
                chosen = Some((a, b, report));
                break;
            }
            types.pop();
            free = free.saturating_mul(2);
        }
        let Some((a, b, report)) = chosen else {
            return Err(ConstructionError::Infeasible {
                level: n,
                why: "no type entry within the attempt budget meets the parity bound".into(),
            });
        };
        cur_c = report.measured_far[0];
        levels.push(ScheduledLevel {
            level: n,
            a,
            b,
            direction,
            offset: report.n,
            theta: report.theta,
            k_floor: floors[n - 1],
            c_prime: cur_c,
        });
    }

    Ok(CombinatoricsSchedule {
        levels,
        eps: eps_sequence.to_vec(),
    })
}

/// Push failures that mean "this parameter point is outside the island",
/// as opposed to caps and invariant violations that must propagate.
fn push_soft(e: &RenormError) -> bool {
    matches!(
        e,
        RenormError::Map(_)
            | RenormError::NoPeriodicPoint { .. }
            | RenormError::PullbackInfeasible { .. }
            | RenormError::NotRenormalizable { .. }
            | RenormError::DepthInfeasible { .. }
    )
}

/// Closure residual of the left critical orbit of the level-`lv` view: with
/// A the a-th right iterate of the left critical value, the residual is the
/// signed gap after one more step and b left steps. Broken itineraries
/// saturate to the unit value of the side the break implies, which keeps
/// bisection brackets honest far from the vertex.
fn view_closure_s1(sm: &ScheduledMap, lv: usize, a: u32, b: u32) -> Result<f64, RenormError> {
    let crit = sm.crit_at(lv);
    let (uhat, _) = sm.crit_values_at(lv);
    let mut x = uhat;
    for _ in 0..a {
        if x <= crit {
            return Ok(-1.0);
        }
        match sm.eval_at(lv, x) {
            Ok(y) => x = y,
            Err(RenormError::Map(_)) => return Ok(-1.0),
            Err(e) => return Err(e),
        }
    }
    if x <= crit {
        return Ok(-1.0);
    }
    let apt = x;
    let mut y = match sm.eval_at(lv, apt) {
        Ok(y) => y,
        Err(RenormError::Map(_)) => return Ok(-1.0),
        Err(e) => return Err(e),
    };
    for _ in 0..b {
        if y >= crit {
            return Ok(1.0);
        }
        match sm.eval_at(lv, y) {
            Ok(z) => y = z,
            Err(RenormError::Map(_)) => return Ok(1.0),
            Err(e) => return Err(e),
        }
    }
    Ok(y - apt)
}

/// Mirror residual for the right critical orbit; increasing in the v
/// complement where the left one is decreasing in the u complement.
fn view_closure_s2(sm: &ScheduledMap, lv: usize, a: u32, b: u32) -> Result<f64, RenormError> {
    let crit = sm.crit_at(lv);
    let (_, vhat) = sm.crit_values_at(lv);
    let mut x = vhat;
    for _ in 0..b {
        if x >= crit {
            return Ok(1.0);
        }
        match sm.eval_at(lv, x) {
            Ok(y) => x = y,
            Err(RenormError::Map(_)) => return Ok(1.0),
            Err(e) => return Err(e),
        }
    }
    if x >= crit {
        return Ok(1.0);
    }
    let bpt = x;
    let mut y = match sm.eval_at(lv, bpt) {
        Ok(y) => y,
        Err(RenormError::Map(_)) => return Ok(1.0),
        Err(e) => return Err(e),
    };
    for _ in 0..a {
        if y <= crit {
            return Ok(-1.0);
        }
        match sm.eval_at(lv, y) {
            Ok(z) => y = z,
            Err(RenormError::Map(_)) => return Ok(-1.0),
            Err(e) => return Err(e),
        }
    }
    Ok(y - bpt)
}

fn view_closure(sm: &ScheduledMap, lv: usize, a: u32, b: u32) -> Result<(f64, f64), RenormError> {
    Ok((
        view_closure_s1(sm, lv, a, b)?,
        view_closure_s2(sm, lv, a, b)?,
    ))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum ResidualSide {
    Left,
    Right,
}

/// One closure residual of the deepest scheduled level at base parameters
/// (du, dv). Prefix levels are pushed first; if a prefix level fails to
/// renormalize, its own closure residual stands in, which points back
/// toward that level's island with the same signs.
fn deep_residual(
    spec: &FamilySpec,
    schedule: &[(u32, u32)],
    du: f64,
    dv: f64,
    side: ResidualSide,
    tol: &Tolerances,
) -> Result<f64, ConstructionError> {
    let m = spec.map_at_complements(du, dv)?;
    let mut sm = ScheduledMap::with_tolerances(m, *tol);
    let last = schedule.len() - 1;
    for (i, &(a, b)) in schedule.iter().enumerate() {
        let here = if i == last {
            true
        } else {
            match sm.push_level(a, b) {
                Ok(_) => false,
                Err(e) if push_soft(&e) => true,
                Err(e) => return Err(e.into()),
            }
        };
        if here {
            let r = match side {
                ResidualSide::Left => view_closure_s1(&sm, i, a, b)?,
                ResidualSide::Right => view_closure_s2(&sm, i, a, b)?,
            };
            return Ok(r);
        }
    }
    unreachable!("schedule is validated nonempty")
}

const DEEP_ROUNDS: usize = 24;
const DEEP_BISECT_MAX: usize = 64;
/// Bisection floor in log-parameter space, a few ulps of ln(complement).
const DEEP_T_TOL: f64 = 5e-15;

/// Bisect `r` over ln(x) between the given log endpoints; `decreasing`
/// states the residual's orientation in x. Returns the midpoint and the
/// final bracket.
fn t_bisect<R>(
    mut r: R,
    mut tl: f64,
    mut th: f64,
    decreasing: bool,
) -> Result<(f64, (f64, f64)), ConstructionError>
where
    R: FnMut(f64) -> Result<f64, ConstructionError>,
{
    for _ in 0..DEEP_BISECT_MAX {
        if th - tl < DEEP_T_TOL {
            break;
        }
        let mid = 0.5 * (tl + th);
        if mid <= tl || mid >= th {
            break;
        }
        let val = r(mid.exp())?;
        let go_up = if decreasing { val > 0.0 } else { val < 0.0 };
        if go_up {
            tl = mid;
        } else {
            th = mid;
        }
    }
    Ok((0.5 * (tl + th), (tl, th)))
}

struct DeepSolve {
    du: f64,
    dv: f64,
    /// final root-isolation brackets, in complements
    iso_du: (f64, f64),
    iso_dv: (f64, f64),
}

/// Solve the deepest full vertex of `schedule` by alternating log-space
/// bisections of the two closure residuals. Brackets start at the previous
/// level's box and shrink around the running root; a root pinned against a
/// shrunken edge re-scans the full bracket, so temporary drift from the
/// cross-coupling heals itself.
fn deep_vertex(
    spec: &FamilySpec,
    schedule: &[(u32, u32)],
    br_du: (f64, f64),
    br_dv: (f64, f64),
    seed_dv: f64,
    tol: &Tolerances,
) -> Result<DeepSolve, ConstructionError> {
    let full_u = (br_du.0.ln(), br_du.1.ln());
    let full_v = (br_dv.0.ln(), br_dv.1.ln());
    let (mut span_u, mut span_v) = (full_u, full_v);
    let mut dv = seed_dv;
    let mut du = f64::NAN;
    let mut last = (f64::NAN, f64::NAN);
    let mut iso_u = full_u;
    let mut iso_v = full_v;

    let near_edge = |t: f64, span: (f64, f64)| {
        let w = span.1 - span.0;
        t - span.0 < 0.02 * w || span.1 - t < 0.02 * w
    };

    for _ in 0..DEEP_ROUNDS {
        let (mut tu, mut bru) = t_bisect(
            |d| deep_residual(spec, schedule, d, dv, ResidualSide::Left, tol),
            span_u.0,
            span_u.1,
            true,
        )?;
        if span_u != full_u && near_edge(tu, span_u) {
            (tu, bru) = t_bisect(
                |d| deep_residual(spec, schedule, d, dv, ResidualSide::Left, tol),
                full_u.0,
                full_u.1,
                true,
            )?;
        }
        du = tu.exp();
        iso_u = bru;

        let (mut tv, mut brv) = t_bisect(
            |d| deep_residual(spec, schedule, du, d, ResidualSide::Right, tol),
            span_v.0,
            span_v.1,
            false,
        )?;
        if span_v != full_v && near_edge(tv, span_v) {
            (tv, brv) = t_bisect(
                |d| deep_residual(spec, schedule, du, d, ResidualSide::Right, tol),
                full_v.0,
                full_v.1,
                false,
            )?;
        }
        dv = tv.exp();
        iso_v = brv;

        if (tu - last.0).abs() < 2.0 * DEEP_T_TOL && (tv - last.1).abs() < 2.0 * DEEP_T_TOL {
            break;
        }
        last = (tu, tv);

        // shrink the scan around the running root; a stray root re-widens
        let hw_u = ((span_u.1 - span_u.0) / 8.0).max(64.0 * DEEP_T_TOL);
        span_u = (
            (tu - hw_u).max(full_u.0),
            (tu + hw_u).min(full_u.1),
        );
        let hw_v = ((span_v.1 - span_v.0) / 8.0).max(64.0 * DEEP_T_TOL);
        span_v = (
            (tv - hw_v).max(full_v.0),
            (tv + hw_v).min(full_v.1),
        );
    }

    Ok(DeepSolve {
        du,
        dv,
        iso_du: (iso_u.0.exp(), iso_u.1.exp()),
        iso_dv: (iso_v.0.exp(), iso_v.1.exp()),
    })
}

const BOX_WALK_STEPS: usize = 6;
const BOX_EDGE_ITERS: usize = 20;
/// Island marching is skipped when one validity probe would cost more base
/// evaluations than this.
const BOX_PROBE_BUDGET: u64 = 500_000;

/// (du, dv) intervals of a parameter box, in complements.
type ParamBox = ((f64, f64), (f64, f64));

/// Axis-aligned box around the deepest level's island, marched as slices
/// through the vertex inside the (widened) previous box. The bracket ends
/// lie outside the previous level's island, so every edge bisection has an
/// honest outside endpoint.
fn deep_box(
    spec: &FamilySpec,
    schedule: &[(u32, u32)],
    vertex: (f64, f64),
    br_du: (f64, f64),
    br_dv: (f64, f64),
    tol: &Tolerances,
) -> Result<ParamBox, ConstructionError> {
    let level = schedule.len();
    let valid = |du: f64, dv: f64| -> Result<bool, ConstructionError> {
        if !(du > 0.0 && dv > 0.0 && du < 1.0 && dv < 1.0) {
            return Ok(false);
        }
        let Ok(m) = spec.map_at_complements(du, dv) else {
            return Ok(false);
        };
        let mut sm = ScheduledMap::with_tolerances(m, *tol);
        for &(a, b) in schedule {
            match sm.push_level(a, b) {
                Ok(_) => {}
                Err(e) if push_soft(&e) => return Ok(false),
                Err(e) => return Err(e.into()),
            }
        }
        Ok(true)
    };

    // log-space edge between a valid dv and an invalid bracket end
    let dv_edge = |du: f64, t_in: f64, t_out: f64| -> Result<f64, ConstructionError> {
        let (mut ti, mut to) = (t_in, t_out);
        for _ in 0..BOX_EDGE_ITERS {
            let mid = 0.5 * (ti + to);
            if valid(du, mid.exp())? {
                ti = mid;
            } else {
                to = mid;
            }
        }
        Ok(to.exp())
    };

    let slice = |du: f64, dv_seed: f64| -> Result<Option<(f64, f64)>, ConstructionError> {
        if !valid(du, dv_seed)? {
            return Ok(None);
        }
        let ts = dv_seed.ln();
        let lo = dv_edge(du, ts, br_dv.0.ln())?;
        let hi = dv_edge(du, ts, br_dv.1.ln())?;
        Ok(Some((lo, hi)))
    };

    let Some(vslice) = slice(vertex.0, vertex.1)? else {
        return Err(ConstructionError::Infeasible {
            level,
            why: "the solved vertex fails its own validity probe".into(),
        });
    };
    let (mut dv_lo, mut dv_hi) = vslice;
    let tv = vertex.0.ln();

    // march du outward from the vertex, following each slice's midpoint,
    // and pinch the last stretch between a valid and an invalid station
    let mut walk = |t_limit: f64| -> Result<f64, ConstructionError> {
        let h = (t_limit - tv) / BOX_WALK_STEPS as f64;
        let mut t_in = tv;
        let mut seed = f64::exp(0.5 * (dv_lo.ln() + dv_hi.ln()));
        let mut t_out = t_limit;
        for i in 1..=BOX_WALK_STEPS {
            let t = tv + h * i as f64;
            match slice(t.exp(), seed)? {
                Some((lo, hi)) => {
                    dv_lo = dv_lo.min(lo);
                    dv_hi = dv_hi.max(hi);
                    seed = f64::exp(0.5 * (lo.ln() + hi.ln()));
                    t_in = t;
                }
                None => {
                    t_out = t;
                    break;
                }
            }
        }
        for _ in 0..BOX_EDGE_ITERS {
            let mid = 0.5 * (t_in + t_out);
            match slice(mid.exp(), seed)? {
                Some((lo, hi)) => {
                    dv_lo = dv_lo.min(lo);
                    dv_hi = dv_hi.max(hi);
                    seed = f64::exp(0.5 * (lo.ln() + hi.ln()));
                    t_in = mid;
                }
                None => t_out = mid,
            }
        }
        Ok(t_out.exp())
    };

    let du_lo = walk(br_du.0.ln())?;
    let du_hi = walk(br_du.1.ln())?;
    Ok(((du_lo.min(du_hi), du_lo.max(du_hi)), (dv_lo, dv_hi)))
}

/// One pinned level of a finished construction.
#[derive(Debug, Clone, Serialize)]
pub struct ConstructionLevel {
    pub level: usize,
    pub a: u32,
    pub b: u32,
    /// box containing this level's island, in complements (1-u, 1-v); for
    /// levels whose return times make island marching unaffordable this is
    /// the root-isolation bracket of the vertex solve instead
    pub box_du: (f64, f64),
    pub box_dv: (f64, f64),
    pub box_is_island: bool,
    /// complements of this level's full vertex
    pub vertex: (f64, f64),
    /// rescaled critical point of the deepest return map at this vertex
    pub c_prime: f64,
    /// closure residuals of the deepest level at the vertex
    pub residuals: (f64, f64),
    /// base-map steps of one (left, right) return at this level
    pub return_times: (u64, u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ConstructionOutcome {
    Complete,
    FailedAt { level: usize, why: String },
}

/// Result of pinning a schedule: per-level boxes and vertices, the deepest
/// solved parameters, and the chain of rescaled critical points there.
#[derive(Debug, Clone, Serialize)]
pub struct ConstructionState {
    pub schedule: Vec<(u32, u32)>,
    pub levels: Vec<ConstructionLevel>,
    /// complements (1-u, 1-v) of the deepest vertex reached
    pub parameters: (f64, f64),
    /// rescaled critical points of levels 1..=solved at `parameters`
    pub c_prime_chain: Vec<f64>,
    /// per-level (left, right) gap ratios at `parameters`
    pub gap_ratios: Vec<(f64, f64)>,
    pub outcome: ConstructionOutcome,
}

fn widen(b: (f64, f64)) -> (f64, f64) {
    ((b.0 * 0.5).max(1e-18), (b.1 * 2.0).min(0.999))
}

/// Pin the parameters of a full schedule: level 1 through the family
/// machinery, deeper levels by nested vertex solves seeded from the level
/// above. Levels are verified at their solved points; a failure stops the
/// descent and the state built so far is returned with the failing level
/// recorded.
pub fn build_example(
    spec: &FamilySpec,
    schedule: &[(u32, u32)],
    tol: &Tolerances,
) -> Result<ConstructionState, ConstructionError> {
    if schedule.len() > tol.max_depth {
        return Err(ConstructionError::InvalidInput(format!(
            "depth {} exceeds the cap {}",
            schedule.len(),
            tol.max_depth
        )));
    }
    if schedule.iter().any(|&(a, b)| a == 0 || b == 0) {
        return Err(ConstructionError::InvalidInput(
            "return type entries must be at least 1".into(),
        ));
    }

    let mut state = ConstructionState {
        schedule: schedule.to_vec(),
        levels: Vec::new(),
        parameters: (0.0, 0.0),
        c_prime_chain: Vec::new(),
        gap_ratios: Vec::new(),
        outcome: ConstructionOutcome::Complete,
    };
    if schedule.is_empty() {
        // depth 0: the base full map itself
        return Ok(state);
    }

    let times = measures::return_times(schedule)?;
    let cap = BigUint::from(tol.return_time_cap);
    for lv in 1..=schedule.len() {
        let (tm, tp) = times.pair(lv);
        if *tm > cap || *tp > cap {
            return Err(ConstructionError::Infeasible {
                level: lv,
                why: format!("return time exceeds the cap {}", tol.return_time_cap),
            });
        }
    }
    let rt = |lv: usize| -> (u64, u64) {
        let (tm, tp) = times.pair(lv);
        (
            u64::try_from(tm).expect("cap-checked"),
            u64::try_from(tp).expect("cap-checked"),
        )
    };

    let (a1, b1) = schedule[0];
    match family::island_box(spec, a1, b1, tol) {
        Ok(rec) => {
            state.parameters = rec.vertex_complements;
            state.levels.push(ConstructionLevel {
                level: 1,
                a: a1,
                b: b1,
                box_du: (1.0 - rec.box_u.1, 1.0 - rec.box_u.0),
                box_dv: (1.0 - rec.box_v.1, 1.0 - rec.box_v.0),
                box_is_island: true,
                vertex: rec.vertex_complements,
                c_prime: rec.c_prime,
                residuals: rec.residuals,
                return_times: rt(1),
            });
        }
        Err(e) => {
            state.outcome = ConstructionOutcome::FailedAt {
                level: 1,
                why: e.to_string(),
            };
            return Ok(state);
        }
    }

    for k in 2..=schedule.len() {
        let prev = state.levels.last().expect("level 1 is present");
        let br_du = widen(prev.box_du);
        let br_dv = widen(prev.box_dv);
        let seed_dv = prev.vertex.1;
        let part = &schedule[..k];
        let (a, b) = schedule[k - 1];

        let sol = match deep_vertex(spec, part, br_du, br_dv, seed_dv, tol) {
            Ok(s) => s,
            Err(e) => {
                state.outcome = ConstructionOutcome::FailedAt {
                    level: k,
                    why: e.to_string(),
                };
                return Ok(state);
            }
        };

        // verify at the solved point: every prefix level must push and the
        // deepest closure residuals must vanish at the working tolerance
        let verified = (|| -> Result<(f64, f64, f64), ConstructionError> {
            let m = spec.map_at_complements(sol.du, sol.dv)?;
            let mut sm = ScheduledMap::with_tolerances(m, *tol);
            for &(pa, pb) in &part[..k - 1] {
                sm.push_level(pa, pb)?;
            }
            let (s1, s2) = view_closure(&sm, k - 1, a, b)?;
            sm.push_level(a, b)?;
            Ok((s1, s2, sm.crit_at(k)))
        })();
        let (s1, s2, c_prime) = match verified {
            Ok(v) => v,
            Err(e) => {
                state.outcome = ConstructionOutcome::FailedAt {
                    level: k,
                    why: format!("solved point does not realize the schedule: {e}"),
                };
                return Ok(state);
            }
        };
        if s1.abs() > tol.vertex_residual || s2.abs() > tol.vertex_residual {
            state.outcome = ConstructionOutcome::FailedAt {
                level: k,
                why: format!("closure residuals ({s1:.3e}, {s2:.3e}) exceed the vertex tolerance"),
            };
            return Ok(state);
        }

        let (tm, tp) = rt(k - 1);
        let affordable = (u64::from(a) + u64::from(b)).saturating_mul(tm + tp) <= BOX_PROBE_BUDGET;
        let (box_du, box_dv, box_is_island) = if affordable {
            match deep_box(spec, part, (sol.du, sol.dv), br_du, br_dv, tol) {
                Ok((bu, bv)) => (bu, bv, true),
                Err(e) => {
                    state.outcome = ConstructionOutcome::FailedAt {
                        level: k,
                        why: format!("island box failed: {e}"),
                    };
                    return Ok(state);
                }
            }
        } else {
            (sol.iso_du, sol.iso_dv, false)
        };

        // strict nesting inside the previous level's box
        let nested = box_du.0 > prev.box_du.0
            && box_du.1 < prev.box_du.1
            && box_dv.0 > prev.box_dv.0
            && box_dv.1 < prev.box_dv.1;
        if !nested {
            state.outcome = ConstructionOutcome::FailedAt {
                level: k,
                why: "level box is not strictly nested in the previous one".into(),
            };
            return Ok(state);
        }

        state.parameters = (sol.du, sol.dv);
        state.levels.push(ConstructionLevel {
            level: k,
            a,
            b,
            box_du,
            box_dv,
            box_is_island,
            vertex: (sol.du, sol.dv),
            c_prime,
            residuals: (s1, s2),
            return_times: rt(k),
        });
    }

    // the finished chain at the deepest parameters
    let solved = state.levels.len();
    let m = spec.map_at_complements(state.parameters.0, state.parameters.1)?;
    let mut sm = ScheduledMap::with_tolerances(m, *tol);
    for &(a, b) in &schedule[..solved] {
        sm.push_level(a, b)?;
    }
    state.c_prime_chain = (1..=solved).map(|l| sm.crit_at(l)).collect();
    state.gap_ratios = renorm::gap_ratios(&sm, solved)?;

    // a flip-scheduled family must show the alternating chain: each level's
    // rescaled critical point in the far band opposite the level above
    let base_high = spec.c() >= 2.0 / 3.0;
    let base_low = spec.c() <= 1.0 / 3.0;
    if base_high || base_low {
        for (j, &cp) in state.c_prime_chain.iter().enumerate() {
            let want_low = base_high == (j % 2 == 0);
            let in_band = if want_low {
                (0.125..=1.0 / 3.0).contains(&cp)
            } else {
                (2.0 / 3.0..=0.875).contains(&cp)
            };
            if !in_band {
                state.outcome = ConstructionOutcome::FailedAt {
                    level: j + 1,
                    why: format!("rescaled critical point {cp:.4} escapes its target band"),
                };
                break;
            }
        }
    }

    Ok(state)
}

/// Side statistics of one orbit: the start point and the fraction of time
/// spent right of the critical point, cumulatively at each checkpoint.
#[derive(Debug, Clone, Serialize)]
pub struct OrbitStats {
    pub x: f64,
    pub right_frequencies: Vec<f64>,
    /// how many fresh starts this sample slot needed
    pub resamples: u32,
}

/// Ensemble of orbit statistics over a common checkpoint ladder.
#[derive(Debug, Clone, Serialize)]
pub struct BirkhoffReport {
    pub checkpoints: Vec<u64>,
    pub samples: Vec<OrbitStats>,
    pub resamples_total: u32,
}

fn check_checkpoints(checkpoints: &[u64], tol: &Tolerances) -> Result<(), ConstructionError> {
    if checkpoints.is_empty() {
        return Err(ConstructionError::InvalidInput(
            "need at least one checkpoint".into(),
        ));
    }
    if checkpoints[0] == 0 || checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ConstructionError::InvalidInput(
            "checkpoints must be positive and strictly increasing".into(),
        ));
    }
    if *checkpoints.last().expect("nonempty") > tol.return_time_cap {
        return Err(ConstructionError::InvalidInput(format!(
            "checkpoints exceed the iteration cap {}",
            tol.return_time_cap
        )));
    }
    Ok(())
}

/// Cumulative right-side frequencies of the orbit of `x0` at the given
/// checkpoints. Orbits hitting the critical exclusion propagate the map
/// error so callers can resample.
pub fn orbit_frequencies(
    f: &StandardLorenzMap,
    x0: f64,
    checkpoints: &[u64],
    tol: &Tolerances,
) -> Result<Vec<f64>, ConstructionError> {
    check_checkpoints(checkpoints, tol)?;
    if !(0.0..=1.0).contains(&x0) {
        return Err(ConstructionError::InvalidInput(format!(
            "start point {x0} is outside the interval"
        )));
    }
    let last = *checkpoints.last().expect("nonempty");
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().copied().peekable();
    let mut right: u64 = 0;
    let mut x = x0;
    for t in 0..last {
        if x > f.c() {
            right += 1;
        }
        if next.peek() == Some(&(t + 1)) {
            next.next();
            out.push(right as f64 / (t + 1) as f64);
        }
        if t + 1 < last {
            x = f.eval(x)?;
        }
    }
    Ok(out)
}

/// Orbit statistics for jittered stratified start points. Each sample slot
/// draws from its own deterministic stream, so a fixed seed reproduces the
/// ensemble bit for bit regardless of slot order, and a slot that hits the
/// critical exclusion resamples only itself.
pub fn birkhoff_stats(
    f: &StandardLorenzMap,
    samples: usize,
    checkpoints: &[u64],
    seed: u64,
    tol: &Tolerances,
) -> Result<BirkhoffReport, ConstructionError> {
    if samples == 0 {
        return Err(ConstructionError::InvalidInput(
            "need at least one sample".into(),
        ));
    }
    check_checkpoints(checkpoints, tol)?;

    let mut out = Vec::with_capacity(samples);
    let mut total = 0u32;
    for s in 0..samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let mut resamples = 0u32;
        let stats = loop {
            let x0 = (s as f64 + rng.random::<f64>()) / samples as f64;
            match orbit_frequencies(f, x0, checkpoints, tol) {
                Ok(fr) => {
                    break OrbitStats {
                        x: x0,
                        right_frequencies: fr,
                        resamples,
                    }
                }
                Err(ConstructionError::Map(_)) => {
                    resamples += 1;
                    if resamples > 64 {
                        return Err(ConstructionError::Sampling(format!(
                            "sample slot {s} keeps hitting the critical exclusion"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        total += stats.resamples;
        out.push(stats);
    }
    Ok(BirkhoffReport {
        checkpoints: checkpoints.to_vec(),
        samples: out,
        resamples_total: total,
    })
}

/// Checkpoint ladder matched to a schedule: both return-time scales of
/// every level and a small multiple of each, deduplicated, capped.
pub fn default_checkpoints(
    schedule: &[(u32, u32)],
    tol: &Tolerances,
) -> Result<Vec<u64>, ConstructionError> {
    let times = measures::return_times(schedule)?;
    let cap = BigUint::from(tol.return_time_cap);
    let mut out: Vec<u64> = Vec::new();
    for lv in 1..=schedule.len() {
        let (tm, tp) = times.pair(lv);
        for t in [tm.clone(), tp.clone(), tm * 3u32, tp * 3u32] {
            if t <= cap {
                out.push(u64::try_from(&t).expect("cap-checked"));
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        return Err(ConstructionError::InvalidInput(
            "no checkpoint fits under the iteration cap".into(),
        ));
    }
    Ok(out)
}

/// Total cycle length per level, level 0 first (the whole interval). For a
/// map carrying nested cycle structure the sequence decreases: each level's
/// cycle sits inside the previous one minus its gaps.
pub fn attractor_length(
    f: &StandardLorenzMap,
    schedule: &[(u32, u32)],
    depth: usize,
    tol: &Tolerances,
) -> Result<Vec<f64>, ConstructionError> {
    let cy = renorm::cycles_for(f, schedule, depth, tol)?;
    Ok(cy.iter().map(|l| l.total_length).collect())
}
