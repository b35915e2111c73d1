//! Return intervals, renormalizability checks, and first-return composition.
//!
//! A type-`(a,b)` return interval `C = [p,q]` around the critical point is
//! bounded by periodic points: `p` is fixed under "one left step, then `a`
//! right steps", `q` under "one right step, then `b` left steps". When the
//! first-return map of `C` is again a two-branch map of the same shape, the
//! affinely rescaled return map is a new level, and [`ScheduledMap`] stacks
//! such levels.
//!
//! The solver is written against the [`ReturnOps`] excursion primitives.
//! The base map implements them in distance-to-endpoint coordinates, which
//! is what keeps deep return types solvable: a plain orbit of a point near
//! the repelling fixed point 1 loses all relative precision after a few
//! steps, while the gap-coordinate orbit loses none. Rescaled levels fall
//! back to direct evaluation; their precision budget shrinks with the
//! interval, which caps how aggressive a schedule can be.

use crate::config::Tolerances;
use crate::map::{ItineraryWord, MapError, Side, StandardLorenzMap};
use serde::Serialize;
use thiserror::Error;

const SCAN_CELLS: usize = 256;
const MAX_BISECT: usize = 120;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenormError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("no periodic endpoint on the {side} side for return type ({a},{b})")]
    NoPeriodicPoint { a: u32, b: u32, side: Side },
    #[error("return type ({a},{b}) infeasible: the {side} branch cannot reach its pullback chain")]
    PullbackInfeasible { a: u32, b: u32, side: Side },
    #[error("map is not renormalizable with type ({a},{b}): {reason:?}")]
    NotRenormalizable {
        a: u32,
        b: u32,
        reason: RenormFailure,
    },
    #[error("return time {t} exceeds the cap {cap}")]
    ReturnTimeCap { t: u64, cap: u64 },
    #[error("composition depth {depth} exceeds the cap {cap}")]
    DepthCap { depth: usize, cap: usize },
    #[error("schedule level {level} (type ({a},{b})) is not realizable: {reason:?}")]
    DepthInfeasible {
        level: usize,
        a: u32,
        b: u32,
        reason: RenormFailure,
    },
    #[error("invariant violation: {0}")]
    Invariant(String),
}

/// Why a renormalizability check failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RenormFailure {
    /// No candidate return interval: a periodic endpoint is missing.
    NoInterval,
    /// An excursion leaves its branch or re-enters the interval early.
    WrongItinerary,
    /// The first-return image spills outside the interval.
    NotContained,
    /// The return map's jump does not straddle its own critical point.
    Trivial,
}

/// A solved type-`(a,b)` return interval `[p,q]` with periodic endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReturnInterval {
    pub p: f64,
    pub q: f64,
    pub a: u32,
    pub b: u32,
    /// Achieved periodicity residuals |f^T(x) - x| at p and q.
    pub residuals: (f64, f64),
}

/// Outcome of a renormalizability check, with the branch words that were
/// verified along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct RenormCheck {
    pub renormalizable: bool,
    pub reason: Option<RenormFailure>,
    pub interval: Option<ReturnInterval>,
    pub minus_word: Option<ItineraryWord>,
    pub plus_word: Option<ItineraryWord>,
}

/// One renormalization step: the solved interval and the rescaled data of
/// the first-return map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenormRecord {
    pub interval: ReturnInterval,
    /// Critical point of the rescaled return map.
    pub c_prime: f64,
    /// Rescaled critical values (left, right) of the return map.
    pub crit_values_prime: (f64, f64),
    /// Steps of the underlying map in one (left, right) return.
    pub return_times: (u64, u64),
}

/// Excursion primitives the return solver needs from one level of a map.
/// All coordinates are this level's own `[0,1]`-like frame.
pub(crate) trait ReturnOps {
    fn crit(&self) -> f64;
    /// Width of the excluded neighbourhood of the critical point, in this
    /// level's coordinates.
    fn excl(&self) -> f64;
    /// Supremum of the left branch image, `f(crit-)`.
    fn left_value(&self) -> f64;
    /// Infimum of the right branch image, `f(crit+)`.
    fn right_value(&self) -> f64;
    /// Smallest `x` whose order-`a` right excursion `f_+^a(f_-(x))` is
    /// defined, i.e. `f_-(x)` reaches the `(a-1)`-fold right-branch
    /// pullback of the critical point.
    fn minus_domain_lo(&self, a: u32) -> Result<f64, RenormError>;
    /// Largest `x` whose order-`b` left excursion is defined.
    fn plus_domain_hi(&self, b: u32) -> Result<f64, RenormError>;
    /// `[f_-(x), f_+(f_-(x)), ..., f_+^a(f_-(x))]`; shorter when a point
    /// falls onto the wrong branch or into the critical exclusion.
    fn right_excursion_trace(&self, x: f64, a: u32) -> Result<Vec<f64>, RenormError>;
    fn left_excursion_trace(&self, x: f64, b: u32) -> Result<Vec<f64>, RenormError>;
    /// `[u, f_+(u), ..., f_+^a(u)]` for the left critical value `u`.
    fn left_value_right_orbit(&self, a: u32) -> Result<Vec<f64>, RenormError>;
    /// `[1-v, f_-(1-v), ..., f_-^b(1-v)]` for the right critical value.
    fn right_value_left_orbit(&self, b: u32) -> Result<Vec<f64>, RenormError>;
    /// Whether this level is bitwise mirror symmetric under `x -> 1 - x`
    /// (which requires the critical point to sit at `1/2`): evaluating one
    /// branch at `x` and the other at `1 - x` yields reflected outputs bit
    /// for bit.
    fn mirror_symmetric(&self) -> bool {
        false
    }
}

// ---------------------------------------------------------------------------
// base-map implementation of the excursion primitives

pub(crate) struct BaseOps<'a> {
    pub(crate) map: &'a StandardLorenzMap,
}

impl BaseOps<'_> {
    /// Step the right-branch gap coordinate while the point stays on the
    /// right branch; push the x-coordinate of each point.
    fn run_right_gap(&self, mut w: f64, steps: u32, out: &mut Vec<f64>) {
        let m = self.map;
        let wc = 1.0 - m.c();
        for _ in 0..steps {
            if w >= wc {
                break; // fell to the left branch: no further right steps
            }
            w = m.plus_gap_step(w);
            out.push(1.0 - w);
        }
    }

    fn run_left(&self, mut y: f64, steps: u32, out: &mut Vec<f64>) {
        let m = self.map;
        for _ in 0..steps {
            if y >= m.c() {
                break;
            }
            y = m.eval_minus(y);
            out.push(y);
        }
    }
}

impl ReturnOps for BaseOps<'_> {
    fn crit(&self) -> f64 {
        self.map.c()
    }
    fn excl(&self) -> f64 {
        // the base map evaluates each branch in exact sided coordinates, so
        // probes may approach the critical point to representability; the
        // configured exclusion governs orbit sampling, not branch solves.
        // Deep return types put periodic points within an ulp-scale distance
        // of the critical point, and a wider margin would hide them.
        f64::EPSILON * self.map.c()
    }
    fn left_value(&self) -> f64 {
        self.map.u()
    }
    fn right_value(&self) -> f64 {
        self.map.dv()
    }

    fn minus_domain_lo(&self, a: u32) -> Result<f64, RenormError> {
        let m = self.map;
        let g_tau = m.crit_preimage_gap(a - 1).map_err(|_| {
            RenormError::PullbackInfeasible {
                a,
                b: 0,
                side: Side::Right,
            }
        })?;
        // need u >= 1 - g_tau, i.e. du <= g_tau, with headroom in the gap
        let ratio = (g_tau - m.du()) / m.u();
        if ratio <= 0.0 {
            return Err(RenormError::PullbackInfeasible {
                a,
                b: 0,
                side: Side::Left,
            });
        }
        Ok(m.c() * (-f64::exp_m1(ratio.ln() / m.alpha())))
    }

    fn plus_domain_hi(&self, b: u32) -> Result<f64, RenormError> {
        let m = self.map;
        let tau = m.crit_preimage(Side::Left, b - 1).map_err(|_| {
            RenormError::PullbackInfeasible {
                a: 0,
                b,
                side: Side::Left,
            }
        })?;
        if m.dv() >= tau {
            return Err(RenormError::PullbackInfeasible {
                a: 0,
                b,
                side: Side::Right,
            });
        }
        Ok(1.0 - m.plus_inverse_gap(1.0 - tau))
    }

    fn right_excursion_trace(&self, x: f64, a: u32) -> Result<Vec<f64>, RenormError> {
        let m = self.map;
        if !(0.0 <= x && x < m.c()) {
            return Err(RenormError::Map(MapError::OutsideDomain { x }));
        }
        let mut out = Vec::with_capacity(a as usize + 1);
        let w = m.minus_gap(x);
        out.push(1.0 - w);
        self.run_right_gap(w, a, &mut out);
        Ok(out)
    }

    fn left_excursion_trace(&self, x: f64, b: u32) -> Result<Vec<f64>, RenormError> {
        let m = self.map;
        if !(m.c() < x && x <= 1.0) {
            return Err(RenormError::Map(MapError::OutsideDomain { x }));
        }
        let mut out = Vec::with_capacity(b as usize + 1);
        let y = m.eval_plus_small(x);
        out.push(y);
        self.run_left(y, b, &mut out);
        Ok(out)
    }

    fn left_value_right_orbit(&self, a: u32) -> Result<Vec<f64>, RenormError> {
        let mut out = Vec::with_capacity(a as usize + 1);
        out.push(self.map.u());
        self.run_right_gap(self.map.du(), a, &mut out);
        Ok(out)
    }

    fn right_value_left_orbit(&self, b: u32) -> Result<Vec<f64>, RenormError> {
        let mut out = Vec::with_capacity(b as usize + 1);
        out.push(self.map.dv());
        self.run_left(self.map.dv(), b, &mut out);
        Ok(out)
    }

    fn mirror_symmetric(&self) -> bool {
        // at c = 1/2 with equal critical values the two branch evaluators
        // perform identical arithmetic on reflected inputs, so reflected
        // orbits agree bit for bit
        self.map.c() == 0.5 && self.map.du() == self.map.dv()
    }
}

// ---------------------------------------------------------------------------
// generic solver

/// Evaluate the order-`a` right-excursion return `f_+^a(f_-(x))`, or `None`
/// when the excursion leaves the right branch early.
fn right_return<V: ReturnOps>(v: &V, x: f64, a: u32) -> Result<Option<f64>, RenormError> {
    let tr = v.right_excursion_trace(x, a)?;
    Ok(if tr.len() == a as usize + 1 {
        Some(tr[a as usize])
    } else {
        None
    })
}

fn left_return<V: ReturnOps>(v: &V, x: f64, b: u32) -> Result<Option<f64>, RenormError> {
    let tr = v.left_excursion_trace(x, b)?;
    Ok(if tr.len() == b as usize + 1 {
        Some(tr[b as usize])
    } else {
        None
    })
}

/// Bisect `g` to a sign change inside `[lo, hi]`, where `g(lo)` and `g(hi)`
/// have the signs `s_lo` and `-s_lo`. `g` may be undefined at isolated
/// points (returns `None`); those are dodged by perturbing the midpoint.
fn bisect_on<G>(mut g: G, mut lo: f64, mut hi: f64, s_lo: f64, width_tol: f64) -> Result<(f64, f64), RenormError>
where
    G: FnMut(f64) -> Result<Option<f64>, RenormError>,
{
    let mut g_best = f64::INFINITY;
    for _ in 0..MAX_BISECT {
        if hi - lo <= width_tol {
            break;
        }
        let mut placed = false;
        for frac in [0.5, 0.47, 0.55, 0.41, 0.63] {
            let mid = lo + (hi - lo) * frac;
            if mid <= lo || mid >= hi {
                continue;
            }
            if let Some(val) = g(mid)? {
                g_best = g_best.min(val.abs());
                if val == 0.0 {
                    return Ok((mid, 0.0));
                }
                if (val > 0.0) == (s_lo > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
                placed = true;
                break;
            }
        }
        if !placed {
            break; // bracket riddled with undefined points; accept width
        }
    }
    let root = 0.5 * (lo + hi);
    let resid = match g(root)? {
        Some(val) => val.abs(),
        None => g_best,
    };
    Ok((root, resid))
}

/// All fixed points of a one-sided return composition inside `[lo, hi]`,
/// located by a sign-change scan plus bisection, in ascending order.
fn fixed_points<G>(mut g: G, lo: f64, hi: f64, width_tol: f64) -> Result<Vec<(f64, f64)>, RenormError>
where
    G: FnMut(f64) -> Result<Option<f64>, RenormError>,
{
    if hi <= lo || !hi.is_finite() || !lo.is_finite() {
        return Ok(Vec::new());
    }
    let mut nodes: Vec<(f64, f64)> = Vec::with_capacity(SCAN_CELLS + 1);
    for i in 0..=SCAN_CELLS {
        let x = lo + (hi - lo) * (i as f64) / (SCAN_CELLS as f64);
        let x = x.clamp(lo, hi);
        if let Some(val) = g(x)? {
            nodes.push((x, val));
        }
    }
    let mut roots = Vec::new();
    for w in nodes.windows(2) {
        let ((x0, g0), (x1, g1)) = (w[0], w[1]);
        if g0 == 0.0 {
            roots.push((x0, 0.0));
            continue;
        }
        if (g0 > 0.0) != (g1 > 0.0) {
            roots.push(bisect_on(&mut g, x0, x1, g0.signum(), width_tol)?);
        }
    }
    if let Some(&(x_last, g_last)) = nodes.last() {
        if g_last == 0.0 {
            roots.push((x_last, 0.0));
        }
    }
    Ok(roots)
}

fn solve_interval<V: ReturnOps>(
    v: &V,
    a: u32,
    b: u32,
    _tol: &Tolerances,
) -> Result<ReturnInterval, RenormError> {
    if a == 0 || b == 0 {
        return Err(RenormError::Invariant(
            "return type entries must be at least 1".into(),
        ));
    }
    let crit = v.crit();
    let margin = 4.0 * v.excl();

    // left endpoint p: fixed point of the order-a right excursion
    let lo = v.minus_domain_lo(a)?;
    let hi = crit - margin;
    // endpoints are pinned to representability rather than the configured
    // bisection width: the rescaled critical point divides an interval that
    // shrinks geometrically with the return type, so every representable
    // bit of p and q matters downstream, and the extra halvings are cheap
    let width_tol = f64::EPSILON * crit;
    let g = |x: f64| Ok(right_return(v, x, a)?.map(|fx| fx - x));
    let minus_roots = fixed_points(g, lo + (hi - lo) * 1e-9, hi, width_tol)?;
    let (p, res_p) = match minus_roots.first().copied() {
        Some(r) => r,
        None => {
            return Err(RenormError::NoPeriodicPoint {
                a,
                b,
                side: Side::Left,
            })
        }
    };

    // right endpoint q: fixed point of the order-b left excursion. On a
    // mirror-symmetric level with a symmetric type the interval is exactly
    // symmetric, so q is the reflection of p rather than an independent
    // bisection, which would pick up one-ulp scan asymmetries. The final
    // bracket around p is about an ulp wide, so sliding p to a float whose
    // reflection is exactly representable (the grid above the critical
    // point is coarser) stays within the solve's own uncertainty. The slide
    // goes inward: endpoints a hair inside the true interval keep boundary
    // return orbits in the domain, a hair outside lets them escape by an
    // ulp and poisons deeper levels.
    let (p, res_p, q, res_q) = if a == b && v.mirror_symmetric() {
        let (mut pr, mut res_r) = (p, res_p);
        for _ in 0..8 {
            // the reflection is exact iff both gaps to the critical point
            // agree; each gap is itself an exact subtraction, so this
            // compares real numbers (summing to 1.0 instead would round
            // the defect away)
            if (1.0 - pr) - 0.5 == 0.5 - pr {
                break;
            }
            let cand = f64::from_bits(pr.to_bits() + 1);
            match right_return(v, cand, a)? {
                Some(fx) => {
                    pr = cand;
                    res_r = (fx - cand).abs();
                }
                None => break,
            }
        }
        (pr, res_r, 1.0 - pr, res_r)
    } else {
        let hi2 = v.plus_domain_hi(b)?;
        let lo2 = crit + margin;
        let width_tol2 = f64::EPSILON * crit;
        let h = |x: f64| Ok(left_return(v, x, b)?.map(|fx| fx - x));
        let plus_roots = fixed_points(h, lo2, hi2 - (hi2 - lo2) * 1e-9, width_tol2)?;
        match plus_roots.last().copied() {
            Some((q, res_q)) => (p, res_p, q, res_q),
            None => {
                return Err(RenormError::NoPeriodicPoint {
                    a,
                    b,
                    side: Side::Right,
                })
            }
        }
    };

    if !(p < crit && crit < q) {
        return Err(RenormError::Invariant(format!(
            "solved endpoints straddle failure: p={p}, crit={crit}, q={q}"
        )));
    }
    Ok(ReturnInterval {
        p,
        q,
        a,
        b,
        residuals: (res_p, res_q),
    })
}

/// Data gathered by a successful validation pass.
struct Validated {
    /// `f_+^a(u)`: left critical value of the return map, unscaled.
    left_crit_value: f64,
    /// `f_-^b(1-v)`: right critical value of the return map, unscaled.
    right_crit_value: f64,
}

fn validate<V: ReturnOps>(
    v: &V,
    ri: &ReturnInterval,
    tol: &Tolerances,
) -> Result<Validated, RenormFailure> {
    let crit = v.crit();
    let (a, b) = (ri.a, ri.b);
    let slack = tol.containment;

    // Left half: its image travels along the right branch for a steps and
    // must stay beyond q (earlier entry breaks the return word), then land
    // inside the interval.
    let lo_trace = v
        .right_excursion_trace(ri.p, a)
        .map_err(|_| RenormFailure::WrongItinerary)?;
    let hi_trace = v
        .left_value_right_orbit(a)
        .map_err(|_| RenormFailure::WrongItinerary)?;
    if lo_trace.len() != a as usize + 1 || hi_trace.len() != a as usize + 1 {
        return Err(RenormFailure::WrongItinerary);
    }
    for &pt in &lo_trace[..a as usize] {
        if pt <= crit || pt < ri.q - slack {
            return Err(RenormFailure::WrongItinerary);
        }
    }
    if lo_trace[a as usize] < ri.p - slack || hi_trace[a as usize] > ri.q + slack {
        return Err(RenormFailure::NotContained);
    }

    // Right half, mirrored: image travels along the left branch below p.
    let hi2_trace = v
        .left_excursion_trace(ri.q, b)
        .map_err(|_| RenormFailure::WrongItinerary)?;
    let lo2_trace = v
        .right_value_left_orbit(b)
        .map_err(|_| RenormFailure::WrongItinerary)?;
    if hi2_trace.len() != b as usize + 1 || lo2_trace.len() != b as usize + 1 {
        return Err(RenormFailure::WrongItinerary);
    }
    for &pt in &hi2_trace[..b as usize] {
        if pt >= crit || pt > ri.p + slack {
            return Err(RenormFailure::WrongItinerary);
        }
    }
    if hi2_trace[b as usize] > ri.q + slack || lo2_trace[b as usize] < ri.p - slack {
        return Err(RenormFailure::NotContained);
    }

    // The return map's own jump must straddle its own critical point.
    let left_crit_value = hi_trace[a as usize];
    let right_crit_value = lo2_trace[b as usize];
    if !(left_crit_value > crit && right_crit_value < crit) {
        return Err(RenormFailure::Trivial);
    }

    Ok(Validated {
        left_crit_value,
        right_crit_value,
    })
}

fn word(first: Side, rest: Side, n: u32) -> ItineraryWord {
    let mut symbols = Vec::with_capacity(n as usize + 1);
    symbols.push(first);
    symbols.extend(std::iter::repeat_n(rest, n as usize));
    ItineraryWord {
        symbols,
        hit_critical: None,
    }
}

fn check_generic<V: ReturnOps>(v: &V, a: u32, b: u32, tol: &Tolerances) -> Result<RenormCheck, RenormError> {
    let ri = match solve_interval(v, a, b, tol) {
        Ok(ri) => ri,
        Err(
            RenormError::NoPeriodicPoint { .. } | RenormError::PullbackInfeasible { .. },
        ) => {
            return Ok(RenormCheck {
                renormalizable: false,
                reason: Some(RenormFailure::NoInterval),
                interval: None,
                minus_word: None,
                plus_word: None,
            })
        }
        Err(e) => return Err(e),
    };
    match validate(v, &ri, tol) {
        Ok(_) => Ok(RenormCheck {
            renormalizable: true,
            reason: None,
            interval: Some(ri),
            minus_word: Some(word(Side::Left, Side::Right, a)),
            plus_word: Some(word(Side::Right, Side::Left, b)),
        }),
        Err(reason) => Ok(RenormCheck {
            renormalizable: false,
            reason: Some(reason),
            interval: Some(ri),
            minus_word: None,
            plus_word: None,
        }),
    }
}

/// Solve the type-`(a,b)` return interval of the base map.
pub fn find_return_interval(
    f: &StandardLorenzMap,
    a: u32,
    b: u32,
    tol: &Tolerances,
) -> Result<ReturnInterval, RenormError> {
    solve_interval(&BaseOps { map: f }, a, b, tol)
}

/// Check whether the base map renormalizes with return type `(a,b)`.
pub fn is_renormalizable(
    f: &StandardLorenzMap,
    a: u32,
    b: u32,
    tol: &Tolerances,
) -> Result<RenormCheck, RenormError> {
    check_generic(&BaseOps { map: f }, a, b, tol)
}

/// Renormalize the base map once with return type `(a,b)`.
pub fn renormalize(
    f: &StandardLorenzMap,
    a: u32,
    b: u32,
    tol: &Tolerances,
) -> Result<RenormRecord, RenormError> {
    let ops = BaseOps { map: f };
    let ri = solve_interval(&ops, a, b, tol)?;
    match validate(&ops, &ri, tol) {
        Ok(val) => {
            let span = ri.q - ri.p;
            Ok(RenormRecord {
                interval: ri,
                c_prime: (f.c() - ri.p) / span,
                crit_values_prime: (
                    (val.left_crit_value - ri.p) / span,
                    (val.right_crit_value - ri.p) / span,
                ),
                return_times: (a as u64 + 1, b as u64 + 1),
            })
        }
        Err(reason) => Err(RenormError::NotRenormalizable { a, b, reason }),
    }
}

// ---------------------------------------------------------------------------
// composed levels

/// One solved level of a [`ScheduledMap`]. The endpoints live in the
/// parent level's coordinates; everything else is in this level's own
/// rescaled frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelFrame {
    pub p: f64,
    pub q: f64,
    pub a: u32,
    pub b: u32,
    /// Critical point of this level's rescaled return map.
    pub crit: f64,
    /// Rescaled (left, right) critical values of this level's map.
    pub crit_values: (f64, f64),
    /// Base-map steps in one (left, right) return at this level.
    pub t_minus: u64,
    pub t_plus: u64,
    /// Width of this level's interval in base coordinates.
    pub base_span: f64,
}

/// A base map together with a stack of solved return levels. Level `k`
/// evaluation recursively unfolds into level `k-1` returns, so deep
/// evaluations always run through the base map's precise branch forms.
#[derive(Debug, Clone)]
pub struct ScheduledMap {
    base: StandardLorenzMap,
    tol: Tolerances,
    levels: Vec<LevelFrame>,
}

pub(crate) struct ViewOps<'a> {
    sm: &'a ScheduledMap,
    level: usize,
}

impl ScheduledMap {
    pub fn new(base: StandardLorenzMap) -> Self {
        Self::with_tolerances(base, Tolerances::default())
    }

    pub fn with_tolerances(base: StandardLorenzMap, tol: Tolerances) -> Self {
        ScheduledMap {
            base,
            tol,
            levels: Vec::new(),
        }
    }

    pub fn base(&self) -> &StandardLorenzMap {
        &self.base
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn frames(&self) -> &[LevelFrame] {
        &self.levels
    }

    pub fn schedule(&self) -> Vec<(u32, u32)> {
        self.levels.iter().map(|f| (f.a, f.b)).collect()
    }

    /// Critical point of the level-`level` map in its own coordinates.
    pub fn crit_at(&self, level: usize) -> f64 {
        if level == 0 {
            self.base.c()
        } else {
            self.levels[level - 1].crit
        }
    }

    /// Base-map steps of one (left, right) return at `level`.
    pub fn return_times(&self, level: usize) -> (u64, u64) {
        if level == 0 {
            (1, 1)
        } else {
            let f = &self.levels[level - 1];
            (f.t_minus, f.t_plus)
        }
    }

    /// Critical values of the level-`level` map in its own coordinates.
    pub fn crit_values_at(&self, level: usize) -> (f64, f64) {
        if level == 0 {
            (self.base.u(), self.base.dv())
        } else {
            self.levels[level - 1].crit_values
        }
    }

    /// Endpoints of the level-`level` return interval in base coordinates
    /// (level 0 gives the unit interval).
    pub fn interval_in_base(&self, level: usize) -> (f64, f64) {
        if level == 0 {
            return (0.0, 1.0);
        }
        let f = &self.levels[level - 1];
        let (mut lo, mut hi) = (f.p, f.q);
        for f in self.levels[..level - 1].iter().rev() {
            let span = f.q - f.p;
            lo = f.p + lo * span;
            hi = f.p + hi * span;
        }
        (lo, hi)
    }

    /// Map a point from level-`level` coordinates to base coordinates.
    pub fn point_in_base(&self, level: usize, x: f64) -> f64 {
        let mut y = x;
        for f in self.levels[..level].iter().rev() {
            y = f.p + y * (f.q - f.p);
        }
        y
    }

    fn excl_at(&self, level: usize) -> f64 {
        if level == 0 {
            self.tol.critical_exclusion
        } else {
            let span = self.levels[level - 1].base_span.max(f64::MIN_POSITIVE);
            (self.tol.critical_exclusion / span).min(1e-3)
        }
    }

    /// Evaluate the level-`level` map in its own coordinates.
    pub fn eval_at(&self, level: usize, x: f64) -> Result<f64, RenormError> {
        if level == 0 {
            return Ok(self.base.eval(x)?);
        }
        let fr = &self.levels[level - 1];
        let span = fr.q - fr.p;
        // a parent-level return can land an ulp past its own endpoints, and
        // dividing by the span magnifies that; such points are the domain
        // boundary up to evaluation noise, not an error
        let slack = (64.0 * f64::EPSILON / span).min(1e-3);
        let x = if x > 1.0 && x <= 1.0 + slack {
            1.0
        } else if x < 0.0 && x >= -slack {
            0.0
        } else {
            x
        };
        let crit = fr.crit;
        if (x - crit).abs() < self.excl_at(level) {
            return Err(RenormError::Map(MapError::CriticalPointHit {
                tol: self.excl_at(level),
            }));
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(RenormError::Map(MapError::OutsideDomain { x }));
        }
        let steps = if x < crit { fr.a + 1 } else { fr.b + 1 };
        let mut y = fr.p + x * span;
        for _ in 0..steps {
            y = self.eval_at(level - 1, y)?;
        }
        Ok((y - fr.p) / span)
    }

    /// Evaluate the deepest level.
    pub fn eval(&self, x: f64) -> Result<f64, RenormError> {
        self.eval_at(self.depth(), x)
    }

    fn view(&self, level: usize) -> ViewOps<'_> {
        ViewOps { sm: self, level }
    }

    /// Check renormalizability of the current deepest level.
    pub fn check_next(&self, a: u32, b: u32) -> Result<RenormCheck, RenormError> {
        let d = self.depth();
        if d == 0 {
            is_renormalizable(&self.base, a, b, &self.tol)
        } else {
            check_generic(&self.view(d), a, b, &self.tol)
        }
    }

    /// Solve the `(a,b)` return of the deepest level and push it as a new
    /// level. Enforces the depth and return-time caps.
    pub fn push_level(&mut self, a: u32, b: u32) -> Result<RenormRecord, RenormError> {
        let d = self.depth();
        if d >= self.tol.max_depth {
            return Err(RenormError::DepthCap {
                depth: d + 1,
                cap: self.tol.max_depth,
            });
        }
        let (tm, tp) = self.return_times(d);
        let t_minus = (a as u64)
            .checked_mul(tp)
            .and_then(|x| x.checked_add(tm))
            .ok_or(RenormError::ReturnTimeCap {
                t: u64::MAX,
                cap: self.tol.return_time_cap,
            })?;
        let t_plus = (b as u64)
            .checked_mul(tm)
            .and_then(|x| x.checked_add(tp))
            .ok_or(RenormError::ReturnTimeCap {
                t: u64::MAX,
                cap: self.tol.return_time_cap,
            })?;
        let t_max = t_minus.max(t_plus);
        if t_max > self.tol.return_time_cap {
            return Err(RenormError::ReturnTimeCap {
                t: t_max,
                cap: self.tol.return_time_cap,
            });
        }

        let (ri, val) = if d == 0 {
            let ops = BaseOps { map: &self.base };
            let ri = solve_interval(&ops, a, b, &self.tol)?;
            let val = validate(&ops, &ri, &self.tol)
                .map_err(|reason| RenormError::NotRenormalizable { a, b, reason })?;
            (ri, val)
        } else {
            let view = self.view(d);
            let ri = solve_interval(&view, a, b, &self.tol)?;
            let val = validate(&view, &ri, &self.tol)
                .map_err(|reason| RenormError::NotRenormalizable { a, b, reason })?;
            (ri, val)
        };

        let span = ri.q - ri.p;
        let crit_parent = self.crit_at(d);
        let parent_span = if d == 0 {
            1.0
        } else {
            self.levels[d - 1].base_span
        };
        let frame = LevelFrame {
            p: ri.p,
            q: ri.q,
            a,
            b,
            crit: (crit_parent - ri.p) / span,
            // containment was validated with a small slack, so the rescaled
            // critical values may stick out of the unit interval by noise
            crit_values: (
                ((val.left_crit_value - ri.p) / span).clamp(0.0, 1.0),
                ((val.right_crit_value - ri.p) / span).clamp(0.0, 1.0),
            ),
            t_minus,
            t_plus,
            base_span: parent_span * span,
        };
        let record = RenormRecord {
            interval: ri,
            c_prime: frame.crit,
            crit_values_prime: frame.crit_values,
            return_times: (t_minus, t_plus),
        };
        self.levels.push(frame);
        Ok(record)
    }
}

impl ReturnOps for ViewOps<'_> {
    fn crit(&self) -> f64 {
        self.sm.crit_at(self.level)
    }
    fn excl(&self) -> f64 {
        self.sm.excl_at(self.level)
    }
    fn left_value(&self) -> f64 {
        self.sm.crit_values_at(self.level).0
    }
    fn right_value(&self) -> f64 {
        self.sm.crit_values_at(self.level).1
    }

    fn minus_domain_lo(&self, a: u32) -> Result<f64, RenormError> {
        // pull the critical point back a-1 times along the right branch,
        // then once along the left branch, all by monotone bisection
        let mut t = self.crit();
        for _ in 0..a - 1 {
            if t < self.right_value() {
                return Err(RenormError::PullbackInfeasible {
                    a,
                    b: 0,
                    side: Side::Right,
                });
            }
            t = self.invert_monotone(t, Side::Right)?;
        }
        if t > self.left_value() {
            return Err(RenormError::PullbackInfeasible {
                a,
                b: 0,
                side: Side::Left,
            });
        }
        self.invert_monotone(t, Side::Left)
    }

    fn plus_domain_hi(&self, b: u32) -> Result<f64, RenormError> {
        let mut t = self.crit();
        for _ in 0..b - 1 {
            if t > self.left_value() {
                return Err(RenormError::PullbackInfeasible {
                    a: 0,
                    b,
                    side: Side::Left,
                });
            }
            t = self.invert_monotone(t, Side::Left)?;
        }
        if t < self.right_value() {
            return Err(RenormError::PullbackInfeasible {
                a: 0,
                b,
                side: Side::Right,
            });
        }
        self.invert_monotone(t, Side::Right)
    }

    fn right_excursion_trace(&self, x: f64, a: u32) -> Result<Vec<f64>, RenormError> {
        let crit = self.crit();
        if !(0.0 <= x && x < crit) {
            return Err(RenormError::Map(MapError::OutsideDomain { x }));
        }
        let mut out = Vec::with_capacity(a as usize + 1);
        let mut y = self.sm.eval_at(self.level, x)?;
        out.push(y);
        for _ in 0..a {
            if y <= crit {
                break;
            }
            y = self.sm.eval_at(self.level, y)?;
            out.push(y);
        }
        Ok(out)
    }

    fn left_excursion_trace(&self, x: f64, b: u32) -> Result<Vec<f64>, RenormError> {
        let crit = self.crit();
        if !(crit < x && x <= 1.0) {
            return Err(RenormError::Map(MapError::OutsideDomain { x }));
        }
        let mut out = Vec::with_capacity(b as usize + 1);
        let mut y = self.sm.eval_at(self.level, x)?;
        out.push(y);
        for _ in 0..b {
            if y >= crit {
                break;
            }
            y = self.sm.eval_at(self.level, y)?;
            out.push(y);
        }
        Ok(out)
    }

    fn left_value_right_orbit(&self, a: u32) -> Result<Vec<f64>, RenormError> {
        let crit = self.crit();
        let mut out = Vec::with_capacity(a as usize + 1);
        let mut y = self.left_value();
        out.push(y);
        for _ in 0..a {
            if y <= crit {
                break;
            }
            y = self.sm.eval_at(self.level, y)?;
            out.push(y);
        }
        Ok(out)
    }

    fn right_value_left_orbit(&self, b: u32) -> Result<Vec<f64>, RenormError> {
        let crit = self.crit();
        let mut out = Vec::with_capacity(b as usize + 1);
        let mut y = self.right_value();
        out.push(y);
        for _ in 0..b {
            if y >= crit {
                break;
            }
            y = self.sm.eval_at(self.level, y)?;
            out.push(y);
        }
        Ok(out)
    }
}

impl ViewOps<'_> {
    /// Invert one monotone branch of this level by bisection.
    fn invert_monotone(&self, y: f64, side: Side) -> Result<f64, RenormError> {
        let crit = self.crit();
        let excl = self.excl();
        let (mut lo, mut hi) = match side {
            Side::Left => (0.0, crit - excl),
            Side::Right => (crit + excl, 1.0),
        };
        // branch is increasing on each side
        for _ in 0..MAX_BISECT {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let val = self.sm.eval_at(self.level, mid)?;
            if val < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

// ---------------------------------------------------------------------------
// cycle geometry

/// The interval cycles of one level in base coordinates: the forward orbit
/// of each half of the return interval, the bounding gaps, and the total
/// length.
#[derive(Debug, Clone, Serialize)]
pub struct CycleLevel {
    pub level: usize,
    /// Orbit intervals of the left half, `[p, c]` first.
    pub minus: Vec<(f64, f64)>,
    /// Orbit intervals of the right half, `[c, q]` first.
    pub plus: Vec<(f64, f64)>,
    /// Cycle-free component of the parent interval touching the return
    /// interval from the left; `None` at level 0.
    pub gap_left: Option<(f64, f64)>,
    pub gap_right: Option<(f64, f64)>,
    /// Total length of all cycle intervals.
    pub total_length: f64,
}

/// Base-coordinate interval cycles for levels `0..=depth` of the composed
/// map. Verifies that each level's intervals are pairwise disjoint.
pub fn cycles(sm: &ScheduledMap, depth: usize) -> Result<Vec<CycleLevel>, RenormError> {
    if depth > sm.depth() {
        return Err(RenormError::Invariant(format!(
            "cycle depth {depth} exceeds solved depth {}",
            sm.depth()
        )));
    }
    let base = sm.base();
    let c = base.c();
    let mut out = Vec::with_capacity(depth + 1);
    out.push(CycleLevel {
        level: 0,
        minus: vec![(0.0, c)],
        plus: vec![(c, 1.0)],
        gap_left: None,
        gap_right: None,
        total_length: 1.0,
    });

    for level in 1..=depth {
        let (bp, bq) = sm.interval_in_base(level);
        let (t_minus, t_plus) = sm.return_times(level);

        let minus = orbit_intervals(base, bp, c, base.u(), t_minus)?;
        let plus = orbit_intervals_plus(base, c, bq, base.dv(), t_plus)?;

        // disjointness across the whole level
        let mut all: Vec<(f64, f64)> = minus.iter().chain(plus.iter()).copied().collect();
        all.sort_by(|x, y| x.0.total_cmp(&y.0));
        for w in all.windows(2) {
            if w[1].0 < w[0].1 - 1e-12 {
                return Err(RenormError::Invariant(format!(
                    "level {level} cycle intervals overlap: ({}, {}) and ({}, {})",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }

        let (parent_lo, parent_hi) = sm.interval_in_base(level - 1);
        let mut left_edge = parent_lo;
        let mut right_edge = parent_hi;
        for &(lo, hi) in &all {
            if hi <= bp + 1e-15 && hi > left_edge && lo < bp {
                left_edge = hi;
            }
            if lo >= bq - 1e-15 && lo < right_edge && hi > bq {
                right_edge = lo;
            }
        }
        let total_length: f64 = all.iter().map(|&(lo, hi)| (hi - lo).max(0.0)).sum();
        out.push(CycleLevel {
            level,
            minus,
            plus,
            gap_left: Some((left_edge, bp)),
            gap_right: Some((bq, right_edge)),
            total_length,
        });
    }
    Ok(out)
}

/// Forward orbit intervals of `[p, c]`: the left endpoint follows `p`, the
/// right endpoint follows the branch value `u` one step behind.
fn orbit_intervals(
    base: &StandardLorenzMap,
    p: f64,
    c: f64,
    u: f64,
    t: u64,
) -> Result<Vec<(f64, f64)>, RenormError> {
    let mut out = Vec::with_capacity(t as usize);
    out.push((p, c));
    let mut lo = p;
    let mut hi = u;
    for _ in 1..t {
        lo = base.eval(lo)?;
        out.push((lo.min(hi), lo.max(hi)));
        hi = base.eval(hi)?;
    }
    Ok(out)
}

/// Forward orbit intervals of `[c, q]`: the right endpoint follows `q`, the
/// left endpoint follows the branch value `1 - v` one step behind.
fn orbit_intervals_plus(
    base: &StandardLorenzMap,
    c: f64,
    q: f64,
    dv: f64,
    t: u64,
) -> Result<Vec<(f64, f64)>, RenormError> {
    let mut out = Vec::with_capacity(t as usize);
    out.push((c, q));
    let mut hi = q;
    let mut lo = dv;
    for _ in 1..t {
        hi = base.eval(hi)?;
        out.push((lo.min(hi), lo.max(hi)));
        lo = base.eval(lo)?;
    }
    Ok(out)
}

/// Solve every level of `schedule` on top of `f`, failing with
/// [`RenormError::DepthInfeasible`] at the first level whose type check
/// does not pass.
pub fn compose_schedule(
    f: &StandardLorenzMap,
    schedule: &[(u32, u32)],
    tol: &Tolerances,
) -> Result<ScheduledMap, RenormError> {
    let mut sm = ScheduledMap::with_tolerances(*f, *tol);
    for (i, &(a, b)) in schedule.iter().enumerate() {
        sm.push_level(a, b).map_err(|e| match e {
            RenormError::NotRenormalizable { a, b, reason } => RenormError::DepthInfeasible {
                level: i + 1,
                a,
                b,
                reason,
            },
            RenormError::NoPeriodicPoint { a, b, .. }
            | RenormError::PullbackInfeasible { a, b, .. } => RenormError::DepthInfeasible {
                level: i + 1,
                a,
                b,
                reason: RenormFailure::NoInterval,
            },
            other => other,
        })?;
    }
    Ok(sm)
}

/// Base-coordinate cycles of `f` under `schedule`, to the requested depth.
pub fn cycles_for(
    f: &StandardLorenzMap,
    schedule: &[(u32, u32)],
    depth: usize,
    tol: &Tolerances,
) -> Result<Vec<CycleLevel>, RenormError> {
    if depth > schedule.len() {
        return Err(RenormError::Invariant(format!(
            "depth {depth} exceeds schedule length {}",
            schedule.len()
        )));
    }
    let sm = compose_schedule(f, &schedule[..depth], tol)?;
    cycles(&sm, depth)
}

/// Size of each level's return interval relative to its bounding gaps:
/// `(|C| / |G_left|, |C| / |G_right|)` for levels `1..=depth`.
pub fn gap_ratios(sm: &ScheduledMap, depth: usize) -> Result<Vec<(f64, f64)>, RenormError> {
    let cy = cycles(sm, depth)?;
    let mut out = Vec::with_capacity(depth);
    for lvl in &cy[1..] {
        let (bp, bq) = (lvl.minus[0].0, lvl.plus[0].1);
        let c_len = bq - bp;
        let gl = lvl
            .gap_left
            .map(|(lo, hi)| hi - lo)
            .unwrap_or(f64::INFINITY);
        let gr = lvl
            .gap_right
            .map(|(lo, hi)| hi - lo)
            .unwrap_or(f64::INFINITY);
        out.push((c_len / gl, c_len / gr));
    }
    Ok(out)
}
