//! Parameter-space solvers for the two-parameter standard family at fixed
//! critical point: full vertices of renormalization islands, island
//! bounding boxes, derivative-product asymptotics, and integer offset
//! calibration for steering the renormalized critical point.
//!
//! Vertex equations are solved by alternating coordinate bisection in the
//! logarithm of the critical-value complements (1-u, 1-v). In those
//! coordinates the residuals stay fully conditioned arbitrarily close to
//! the full corner, which is where every large-type vertex lives.

use crate::config::Tolerances;
use crate::map::{MapError, Side, StandardLorenzMap};
use crate::renorm::{
    find_return_interval, is_renormalizable, BaseOps, RenormError, ReturnOps,
};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Renorm(#[from] RenormError),
    #[error("invalid family spec: {0}")]
    InvalidSpec(String),
    #[error("vertex search failed for type ({a},{b}): {why}")]
    NotFound { a: u32, b: u32, why: String },
    #[error("fixed-point derivative at an endpoint is not above 1; the preimage product diverges")]
    DivergentProduct,
    #[error("no integer offset keeps the measured critical point in the target band; probes: {probes:?}")]
    OffsetNotFound { probes: Vec<OffsetProbe> },
}

/// A two-parameter slice of standard maps: the critical point and exponent
/// are shared, (u,v) range over a sub-rectangle of (0,1]^2.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FamilySpec {
    c: f64,
    alpha: f64,
    /// inclusive (min, max) for u; max is 1 at the full edge
    u_range: (f64, f64),
    v_range: (f64, f64),
}

impl FamilySpec {
    pub fn new(c: f64, alpha: f64) -> Result<Self, FamilyError> {
        // validate through a map construction at the full corner
        StandardLorenzMap::full(c, alpha)?;
        Ok(FamilySpec {
            c,
            alpha,
            u_range: (1e-3, 1.0),
            v_range: (1e-3, 1.0),
        })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The (u,v)=(1,1) member: both critical values hit the endpoints.
    pub fn full_map(&self) -> StandardLorenzMap {
        StandardLorenzMap::full(self.c, self.alpha).expect("validated at construction")
    }

    pub fn map_at(&self, u: f64, v: f64) -> Result<StandardLorenzMap, MapError> {
        StandardLorenzMap::new(self.c, self.alpha, u, v)
    }

    /// Construct a member from critical-value complements; exact near the
    /// full corner.
    pub fn map_at_complements(&self, du: f64, dv: f64) -> Result<StandardLorenzMap, MapError> {
        StandardLorenzMap::from_complements(self.c, self.alpha, du, dv)
    }

    /// The mirrored family: critical point reflected through 1/2, with the
    /// roles of the two parameters swapped.
    pub fn reflect(&self) -> FamilySpec {
        FamilySpec {
            c: 1.0 - self.c,
            alpha: self.alpha,
            u_range: self.v_range,
            v_range: self.u_range,
        }
    }
}

/// A solved renormalization island: its full vertex, the residuals of the
/// two fullness equations there, the rescaled critical point, and a
/// bounding box for the island in (u,v).
#[derive(Debug, Clone, Serialize)]
pub struct IslandRecord {
    pub a: u32,
    pub b: u32,
    /// (u_min, u_max) bracketing the island along u through the vertex
    pub box_u: (f64, f64),
    pub box_v: (f64, f64),
    pub full_vertex: (f64, f64),
    /// complements (1-u*, 1-v*) of the vertex, exact near the full corner
    pub vertex_complements: (f64, f64),
    /// residuals of the two fullness equations at the vertex
    pub residuals: (f64, f64),
    /// rescaled critical point of the return map at the vertex
    pub c_prime: f64,
}

/// Closure residuals of the two critical orbits. With A = f_+^a(u) and
/// B = f_-^b(1-v), the full vertex is exactly where A is a fixed point of
/// the right return branch and B one of the left return branch:
///
/// s1 = f_-^b(f_+(A)) - A     (decreasing in du near the vertex)
/// s2 = f_+^a(f_-(B)) - B     (increasing in dv near the vertex)
///
/// Unlike residuals against a solved return interval, these are defined on
/// essentially the whole parameter rectangle; where an orbit leaves its
/// branch early the residual is replaced by the unit value of the side the
/// truncation implies, which keeps every bisection bracket honest.
fn closure_residuals(m: &StandardLorenzMap, a: u32, b: u32) -> Result<(f64, f64), RenormError> {
    let ops = BaseOps { map: m };
    let c = m.c();

    let up = ops.left_value_right_orbit(a)?;
    let s1 = if up.len() < a as usize + 1 || up[a as usize] <= c {
        -1.0 // the u-orbit fell off the right branch: u below the vertex
    } else {
        let apt = up[a as usize];
        let tr = ops.left_excursion_trace(apt, b)?;
        if tr.len() == b as usize + 1 {
            tr[b as usize] - apt
        } else {
            1.0 // return orbit escaped upward: u above the vertex
        }
    };

    let down = ops.right_value_left_orbit(b)?;
    let s2 = if down.len() < b as usize + 1 || down[b as usize] >= c {
        1.0 // the (1-v)-orbit left the left branch: v below the vertex
    } else {
        let bpt = down[b as usize];
        let tr = ops.right_excursion_trace(bpt, a)?;
        if tr.len() == a as usize + 1 {
            tr[a as usize] - bpt
        } else {
            -1.0 // return orbit escaped downward: v above the vertex
        }
    };
    Ok((s1, s2))
}

const VERTEX_ROUNDS: usize = 80;
const LOG_BISECT_ITERS: usize = 90;
/// Smallest complement the vertex solver can distinguish from the full
/// edge. Vertices of steep types sit at complements like exp(-a ln Df(1)),
/// which sails below any moderate floor already for two-digit entries, so
/// the bracket opens nearly down to the smallest normal double; the
/// complement-form evaluators lose nothing there.
const COMPLEMENT_FLOOR: f64 = 1e-300;

/// Bisect `r` over `ln(x)` for x in [x_lo, x_hi], where `r` is decreasing
/// in x if `decreasing`, else increasing; returns the root location.
fn log_bisect<R>(
    mut r: R,
    x_lo: f64,
    x_hi: f64,
    decreasing: bool,
) -> Result<f64, RenormError>
where
    R: FnMut(f64) -> Result<f64, RenormError>,
{
    let mut t_lo = x_lo.ln();
    let mut t_hi = x_hi.ln();
    for _ in 0..LOG_BISECT_ITERS {
        let mid = 0.5 * (t_lo + t_hi);
        if mid <= t_lo || mid >= t_hi {
            break;
        }
        let val = r(mid.exp())?;
        let go_up = if decreasing { val > 0.0 } else { val < 0.0 };
        if go_up {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
    }
    Ok((0.5 * (t_lo + t_hi)).exp())
}

/// Solve the full vertex of the type-(a,b) island: the parameter point
/// where both renormalized branches are exactly full. The returned record
/// has a degenerate box at the vertex; `island_box` widens it.
pub fn full_vertex(
    spec: &FamilySpec,
    a: u32,
    b: u32,
    tol: &Tolerances,
) -> Result<IslandRecord, FamilyError> {
    if a == 0 || b == 0 {
        return Err(FamilyError::InvalidSpec(
            "return type entries must be at least 1".into(),
        ));
    }
    let du_max = 1.0 - spec.u_range.0;
    let dv_max = 1.0 - spec.v_range.0;
    let mut du = COMPLEMENT_FLOOR;
    let mut dv = COMPLEMENT_FLOOR;

    // mirror-symmetric family, symmetric type: the vertex lies on the
    // diagonal, so one bisection there replaces the alternation and keeps
    // the two complements bitwise equal (downstream symmetry is then exact)
    if spec.c == 0.5 && a == b {
        let d = log_bisect(
            |d_probe| {
                let m = spec.map_at_complements(d_probe, d_probe)?;
                Ok(closure_residuals(&m, a, b)?.0)
            },
            COMPLEMENT_FLOOR,
            du_max.min(dv_max),
            true,
        )?;
        return finish_vertex(spec, a, b, d, d, tol);
    }

    let mut last = (f64::INFINITY, f64::INFINITY);
    for _ in 0..VERTEX_ROUNDS {
        // solve s1 in du at fixed dv (s1 decreasing in du)
        let dv_now = dv;
        du = log_bisect(
            |du_probe| {
                let m = spec.map_at_complements(du_probe, dv_now)?;
                Ok(closure_residuals(&m, a, b)?.0)
            },
            COMPLEMENT_FLOOR,
            du_max,
            true,
        )?;
        // solve s2 in dv at fixed du (s2 increasing in dv)
        let du_now = du;
        dv = log_bisect(
            |dv_probe| {
                let m = spec.map_at_complements(du_now, dv_probe)?;
                Ok(closure_residuals(&m, a, b)?.1)
            },
            COMPLEMENT_FLOOR,
            dv_max,
            false,
        )?;

        let m = spec.map_at_complements(du, dv)?;
        let s = closure_residuals(&m, a, b)?;
        // iterate to the parameter-space fixed point: the rescaled critical
        // point downstream needs the vertex pinned far below the nominal
        // residual tolerance, and extra rounds are cheap
        if (du, dv) == last || (s.0 == 0.0 && s.1 == 0.0) {
            break;
        }
        last = (du, dv);
    }
    finish_vertex(spec, a, b, du, dv, tol)
}

/// Verify a closure solution against the actually solved return interval
/// (the fullness residuals must vanish there too) and assemble the record.
fn finish_vertex(
    spec: &FamilySpec,
    a: u32,
    b: u32,
    du: f64,
    dv: f64,
    tol: &Tolerances,
) -> Result<IslandRecord, FamilyError> {
    let m = spec.map_at_complements(du, dv)?;
    let ri = find_return_interval(&m, a, b, tol).map_err(|e| FamilyError::NotFound {
        a,
        b,
        why: format!("no return interval at the closure solution: {e}"),
    })?;
    let ops = BaseOps { map: &m };
    let up = ops.left_value_right_orbit(a)?;
    let down = ops.right_value_left_orbit(b)?;
    let r1 = up.last().copied().unwrap_or(f64::NAN) - ri.q;
    let r2 = down.last().copied().unwrap_or(f64::NAN) - ri.p;
    if !(r1.abs() <= tol.vertex_residual && r2.abs() <= tol.vertex_residual) {
        return Err(FamilyError::NotFound {
            a,
            b,
            why: format!("fullness residuals ({r1:.2e}, {r2:.2e}) above tolerance"),
        });
    }
    let (u, v) = (m.u(), m.v());
    Ok(IslandRecord {
        a,
        b,
        box_u: (u, u),
        box_v: (v, v),
        full_vertex: (u, v),
        vertex_complements: (du, dv),
        residuals: (r1, r2),
        c_prime: (spec.c - ri.p) / (ri.q - ri.p),
    })
}

/// Widen the vertex record to an axis-aligned bounding box of the island:
/// march outward from the vertex in u, measure the island's v-slice at each
/// station, and bisect the u values where the slice pinches out.
pub fn island_box(
    spec: &FamilySpec,
    a: u32,
    b: u32,
    tol: &Tolerances,
) -> Result<IslandRecord, FamilyError> {
    let mut rec = full_vertex(spec, a, b, tol)?;
    let (du0, _dv0) = rec.vertex_complements;
    let du_cap = 1.0 - spec.u_range.0;

    // The island is a wedge between the two fullness curves crossing at the
    // vertex, so a fixed-u line meets it in a v-interval. Walking u and
    // measuring that slice gives the axis-aligned bounding box; probing
    // along axis rays from the vertex would only graze the corner.
    let slice_of = |du: f64| -> Result<Option<(f64, f64)>, FamilyError> {
        match v_slice(spec, a, b, du, tol)? {
            Some((v_lo, v_hi)) => {
                // confirm against the actual validator at the slice middle
                let dv_mid = ((1.0 - v_lo) * (1.0 - v_hi)).sqrt();
                let m = spec.map_at_complements(du, dv_mid)?;
                let chk = is_renormalizable(&m, a, b, tol)?;
                Ok(chk.renormalizable.then_some((v_lo, v_hi)))
            }
            None => Ok(None),
        }
    };

    // march away from the vertex in the u complement, doubling the offset
    // until the slice dies, then bisect the pinch point
    let march = |downward: bool| -> Result<(f64, Option<(f64, f64)>), FamilyError> {
        let probe = |delta: f64| -> f64 {
            let du = if downward { du0 + delta } else { du0 - delta };
            du.clamp(COMPLEMENT_FLOOR, du_cap)
        };
        let mut delta = du0 * 1e-3;
        let mut last_in = 0.0;
        let mut inner_slice = None;
        let mut first_out = None;
        for _ in 0..60 {
            let du = probe(delta);
            match slice_of(du)? {
                Some(sl) => {
                    last_in = delta;
                    inner_slice = Some(sl);
                    if du == COMPLEMENT_FLOOR || du == du_cap {
                        break; // island runs into the parameter domain edge
                    }
                }
                None => {
                    first_out = Some(delta);
                    break;
                }
            }
            delta *= 2.0;
        }
        let Some(mut hi) = first_out else {
            return Ok((probe(last_in), inner_slice));
        };
        let mut lo = last_in;
        let stop = tol.island_edge.min((hi - lo) * 1e-3).max(f64::EPSILON * du0);
        while hi - lo > stop {
            let mid = 0.5 * (lo + hi);
            match slice_of(probe(mid))? {
                Some(sl) => {
                    lo = mid;
                    inner_slice = Some(sl);
                }
                None => hi = mid,
            }
        }
        Ok((probe(lo), inner_slice))
    };

    let (du_far, slice_far) = march(true)?;
    let (du_near, slice_near) = march(false)?;
    let (u0, v0) = rec.full_vertex;
    // v runs lowest at the far (small-u) end of the wedge and highest at
    // the near end; guard with the vertex in case either march died at once
    let v_min = slice_far.map_or(v0, |s| s.0).min(v0);
    let v_max = slice_near.map_or(v0, |s| s.1).max(v0);
    rec.box_u = (1.0 - du_far, (1.0 - du_near).max(u0));
    rec.box_v = (v_min, v_max);
    Ok(rec)
}

const SLICE_BISECT_ITERS: usize = 60;

/// The v-interval (if any) on which the map at the given u complement is
/// type-(a,b) renormalizable, located through the two closure residuals:
/// the left one must not overshoot (nonpositive) and the right one must not
/// undershoot (nonnegative). Each residual is monotone along the slice, so
/// its feasible set is a dv-interval found by one endpoint check plus one
/// bisection.
fn v_slice(
    spec: &FamilySpec,
    a: u32,
    b: u32,
    du: f64,
    _tol: &Tolerances,
) -> Result<Option<(f64, f64)>, FamilyError> {
    let dv_lo = COMPLEMENT_FLOOR;
    let dv_hi = 1.0 - spec.v_range.0;
    let band1 = constraint_band(
        |dv| Ok(closure_residuals(&spec.map_at_complements(du, dv)?, a, b)?.0),
        dv_lo,
        dv_hi,
        false,
    )?;
    let band2 = constraint_band(
        |dv| Ok(closure_residuals(&spec.map_at_complements(du, dv)?, a, b)?.1),
        dv_lo,
        dv_hi,
        true,
    )?;
    Ok(match (band1, band2) {
        (Some((a1, b1)), Some((a2, b2))) => {
            let (lo, hi) = (a1.max(a2), b1.min(b2));
            // dv-band back to v-interval
            (lo <= hi).then_some((1.0 - hi, 1.0 - lo))
        }
        _ => None,
    })
}

/// Feasible dv-interval of one signed residual along a fixed-u slice, `None`
/// when the constraint excludes the whole range. `want_nonneg` selects which
/// sign counts as feasible; the residual must be monotone over the range.
fn constraint_band<R>(
    mut r: R,
    lo: f64,
    hi: f64,
    want_nonneg: bool,
) -> Result<Option<(f64, f64)>, FamilyError>
where
    R: FnMut(f64) -> Result<f64, FamilyError>,
{
    let ok = |val: f64| {
        if want_nonneg {
            val >= 0.0
        } else {
            val <= 0.0
        }
    };
    let ok_lo = ok(r(lo)?);
    let ok_hi = ok(r(hi)?);
    match (ok_lo, ok_hi) {
        (true, true) => Ok(Some((lo, hi))),
        (false, false) => Ok(None),
        _ => {
            let (mut t_in, mut t_out) = if ok_lo {
                (lo.ln(), hi.ln())
            } else {
                (hi.ln(), lo.ln())
            };
            for _ in 0..SLICE_BISECT_ITERS {
                let mid = 0.5 * (t_in + t_out);
                if mid == t_in || mid == t_out {
                    break;
                }
                if ok(r(mid.exp())?) {
                    t_in = mid;
                } else {
                    t_out = mid;
                }
            }
            let edge = (0.5 * (t_in + t_out)).exp();
            Ok(Some(if ok_lo { (lo, edge) } else { (edge, hi) }))
        }
    }
}

/// Truncated products of branch-derivative ratios along the critical
/// point's backward orbits toward the two endpoint fixed points.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GammaEstimate {
    pub gamma_minus: f64,
    pub gamma_plus: f64,
    /// number of preimage terms in each product
    pub truncation: u32,
    /// bound on the absolute error of both log-products
    pub tail_bound: f64,
}

impl GammaEstimate {
    /// log of the ratio gamma_minus / gamma_plus
    pub fn log_ratio(&self) -> f64 {
        self.gamma_minus.ln() - self.gamma_plus.ln()
    }
}

/// Estimate the endpoint derivative products: for each branch, the product
/// over k of Df(x_k)/Df(endpoint) with x_k the k-th backward branch image
/// of the critical point. Terms shrink geometrically at the rate of the
/// endpoint derivative, and the recorded tail bound reflects that.
pub fn gamma_estimates(
    map: &StandardLorenzMap,
    truncation: u32,
) -> Result<GammaEstimate, FamilyError> {
    let d0 = map.deriv_at_zero();
    let d1 = map.deriv_at_one();
    if d0 <= 1.0 || d1 <= 1.0 {
        return Err(FamilyError::DivergentProduct);
    }
    let c = map.c();
    let am1 = map.alpha() - 1.0;

    // left product: terms (alpha-1) * ln(1 - x_k/c), x_k descending to 0
    let mut log_minus = 0.0;
    let mut term_next_minus = 0.0;
    for k in 1..=truncation + 1 {
        let x = map.crit_preimage(Side::Left, k)?;
        let term = am1 * (-x / c).ln_1p();
        if k <= truncation {
            log_minus += term;
        } else {
            term_next_minus = term.abs();
        }
    }

    // right product in gap coordinates: terms (alpha-1) * ln(1 - w_k/(1-c))
    let wc = 1.0 - c;
    let mut log_plus = 0.0;
    let mut term_next_plus = 0.0;
    for k in 1..=truncation + 1 {
        let w = map.crit_preimage_gap(k)?;
        let term = am1 * (-w / wc).ln_1p();
        if k <= truncation {
            log_plus += term;
        } else {
            term_next_plus = term.abs();
        }
    }

    // geometric continuation from the first dropped term
    let tail = term_next_minus * d0 / (d0 - 1.0) + term_next_plus * d1 / (d1 - 1.0);
    Ok(GammaEstimate {
        gamma_minus: log_minus.exp(),
        gamma_plus: log_plus.exp(),
        truncation,
        tail_bound: tail,
    })
}

/// Ratio of the endpoint log-derivatives, log Df(1) / log Df(0). For maps
/// with the critical point at 2/3 or beyond this always exceeds
/// [`theta_alpha`], which the function asserts.
pub fn theta(map: &StandardLorenzMap) -> f64 {
    let th = map.deriv_at_one().ln() / map.deriv_at_zero().ln();
    if map.c() >= 2.0 / 3.0 {
        assert!(
            th > theta_alpha(map.alpha()),
            "slope ratio {th} at or below its floor for c = {}",
            map.c()
        );
    }
    th
}

/// Exponent-only floor for the slope ratio: 1 + ln 2 / ln(3 alpha).
pub fn theta_alpha(alpha: f64) -> f64 {
    1.0 + std::f64::consts::LN_2 / (3.0 * alpha).ln()
}

/// Lower envelope of the reachable critical-point band under unit integer
/// offset steps: half of (3 alpha / 2)^(-2/alpha). Its doubled value stays
/// within [e^(-3/e), 1) across all admissible exponents.
pub fn band_floor(alpha: f64) -> f64 {
    0.5 * (1.5 * alpha).powf(-2.0 / alpha)
}

/// Predicted critical point of the rescaled type-(a,b) return map at the
/// island's full vertex, from the family's full-map data alone. Everything
/// is carried in logarithms, so large entries cannot overflow.
pub fn predicted_crit(spec: &FamilySpec, a: u32, b: u32, g: &GammaEstimate) -> f64 {
    let full = spec.full_map();
    let ld0 = full.deriv_at_zero().ln();
    let ld1 = full.deriv_at_one().ln();
    let c = spec.c();
    let logit = (c / (1.0 - c)).ln()
        + (g.log_ratio() + f64::from(b) * ld0 - f64::from(a) * ld1) / spec.alpha();
    1.0 / (1.0 + (-logit).exp())
}

/// Which way the renormalized critical point should move relative to the
/// family's own critical point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FlipDirection {
    /// send it low: the far band is [1/8, 1/3], the near band is >= 2/3
    Lower,
    /// mirrored: far band [2/3, 7/8], near band <= 1/3
    Raise,
}

/// One offset probe: the predicted and (when solved) measured rescaled
/// critical point for b = floor(theta * a) - offset.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OffsetProbe {
    pub offset: i32,
    pub a: u32,
    pub b: u32,
    pub predicted: f64,
    pub measured: Option<f64>,
}

/// Calibrated integer offsets for the two target bands.
#[derive(Debug, Clone, Serialize)]
pub struct FlipReport {
    /// offset sending the measured critical point into the far band
    pub n: i32,
    /// offset keeping the measured critical point in the near band
    pub m: i32,
    pub theta: f64,
    pub a_values: Vec<u32>,
    /// measured critical points at offset n, one per entry of a_values
    pub measured_far: Vec<f64>,
    pub measured_near: Vec<f64>,
}

fn in_far_band(c_prime: f64, dir: FlipDirection) -> bool {
    match dir {
        FlipDirection::Lower => (0.125..=1.0 / 3.0).contains(&c_prime),
        FlipDirection::Raise => (2.0 / 3.0..=0.875).contains(&c_prime),
    }
}

fn in_near_band(c_prime: f64, dir: FlipDirection) -> bool {
    match dir {
        FlipDirection::Lower => c_prime >= 2.0 / 3.0,
        FlipDirection::Raise => c_prime <= 1.0 / 3.0,
    }
}

/// Calibrate integer offsets against the slope-ratio line b = theta * a:
/// find n with measured crit in the far band and m with it in the near
/// band, for every entry of `a_values`. Offsets are scanned around the
/// prediction and verified on actually solved vertices.
pub fn flip_offsets(
    spec: &FamilySpec,
    direction: FlipDirection,
    a_values: &[u32],
    tol: &Tolerances,
) -> Result<FlipReport, FamilyError> {
    if a_values.is_empty() {
        return Err(FamilyError::InvalidSpec("a_values must not be empty".into()));
    }
    // the mirrored direction delegates to the reflected family, where the
    // same inequalities read in the Lower orientation
    if direction == FlipDirection::Raise {
        let rep = flip_offsets(&spec.reflect(), FlipDirection::Lower, a_values, tol)?;
        return Ok(FlipReport {
            n: rep.n,
            m: rep.m,
            theta: rep.theta,
            a_values: rep.a_values,
            measured_far: rep.measured_far.iter().map(|c| 1.0 - c).collect(),
            measured_near: rep.measured_near.iter().map(|c| 1.0 - c).collect(),
        });
    }

    if spec.c() < 2.0 / 3.0 {
        return Err(FamilyError::InvalidSpec(format!(
            "lowering requires the family critical point at 2/3 or beyond, got {}",
            spec.c()
        )));
    }

    let full = spec.full_map();
    let th = theta(&full);
    let g = gamma_estimates(&full, 60)?;
    let mut probes: Vec<OffsetProbe> = Vec::new();

    // the type entry b for slope-line offset `off` at entry a
    let b_of = |a: u32, off: i32| -> Option<u32> {
        let b = (th * f64::from(a)).floor() as i64 - i64::from(off);
        u32::try_from(b).ok().filter(|&b| b >= 1)
    };

    let measure = |a: u32, b: u32| -> Option<f64> {
        full_vertex(spec, a, b, tol).ok().map(|rec| rec.c_prime)
    };

    let mut solve_band = |near: bool| -> Result<(i32, Vec<f64>), FamilyError> {
        // candidate offsets ordered by predicted distance from band center
        let mut candidates: Vec<(f64, i32)> = (-8..=12)
            .filter_map(|off| {
                let preds: Vec<f64> = a_values
                    .iter()
                    .filter_map(|&a| b_of(a, off).map(|b| predicted_crit(spec, a, b, &g)))
                    .collect();
                if preds.len() != a_values.len() {
                    return None;
                }
                let all_in = preds.iter().all(|&p| {
                    if near {
                        in_near_band(p, FlipDirection::Lower)
                    } else {
                        in_far_band(p, FlipDirection::Lower)
                    }
                });
                if !all_in {
                    return None;
                }
                let target = if near { 0.8 } else { 0.2083 };
                let dist = preds
                    .iter()
                    .map(|&p| (p - target).abs())
                    .fold(0.0f64, f64::max);
                Some((dist, off))
            })
            .collect();
        candidates.sort_by(|x, y| x.0.total_cmp(&y.0));

        for (_, off) in candidates {
            let mut measured = Vec::with_capacity(a_values.len());
            let mut all_ok = true;
            for &a in a_values {
                let Some(b) = b_of(a, off) else {
                    all_ok = false;
                    break;
                };
                let pred = predicted_crit(spec, a, b, &g);
                let got = measure(a, b);
                probes.push(OffsetProbe {
                    offset: off,
                    a,
                    b,
                    predicted: pred,
                    measured: got,
                });
                match got {
                    Some(cp)
                        if (near && in_near_band(cp, FlipDirection::Lower))
                            || (!near && in_far_band(cp, FlipDirection::Lower)) =>
                    {
                        measured.push(cp)
                    }
                    _ => {
                        all_ok = false;
                        break;
                    }
                }
            }
            if all_ok {
                return Ok((off, measured));
            }
        }
        Err(FamilyError::OffsetNotFound {
            probes: probes.clone(),
        })
    };

    let (n, measured_far) = solve_band(false)?;
    let (m, measured_near) = solve_band(true)?;
    Ok(FlipReport {
        n,
        m,
        theta: th,
        a_values: a_values.to_vec(),
        measured_far,
        measured_near,
    })
}
