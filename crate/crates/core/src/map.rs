//! The standard two-branch Lorenz map on the unit interval.
//!
//! The map has a critical discontinuity at `c`: the left branch rises from
//! `f(0) = 0` to the left critical value `u`, the right branch from the
//! right critical value `1 - v` to `f(1) = 1`, and both branches flatten to
//! zero derivative at `c` with a common exponent `alpha`.
//!
//! All branch formulas are written in `expm1`/`ln1p` form and the
//! complements `1 - u`, `1 - v` are stored explicitly. Orbit segments that
//! hug a fixed endpoint are iterated in the distance-to-endpoint coordinate
//! (`minus_gap`, `plus_gap_step`), which keeps *relative* precision where
//! the plain formulas would round to the endpoint and lose the whole
//! signal. Deep return-interval arithmetic depends on this.

use crate::config::{ALPHA_MAX, ALPHA_MIN, CRITICAL_EXCLUSION};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which branch (equivalently, which side of the critical point).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Left => write!(f, "L"),
            Side::Right => write!(f, "R"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("point {x} outside the domain [0,1]")]
    OutsideDomain { x: f64 },
    #[error("evaluation inside the excluded neighbourhood of the critical point (|x - c| < {tol:e})")]
    CriticalPointHit { tol: f64 },
    #[error("value {y} outside the image of the {side} branch")]
    OutOfRange { side: Side, y: f64 },
}

/// A finite orbit segment. `points[k+1] = f(points[k])` for every stored
/// consecutive pair; iteration stops early when a point falls inside the
/// excluded neighbourhood of the critical point, recording its index.
#[derive(Debug, Clone, PartialEq)]
pub struct Orbit {
    pub points: Vec<f64>,
    pub hit_critical: Option<usize>,
}

/// Branch symbols of an orbit segment, with the same early-stop convention
/// as [`Orbit`].
#[derive(Debug, Clone, PartialEq)]
pub struct ItineraryWord {
    pub symbols: Vec<Side>,
    pub hit_critical: Option<usize>,
}

impl std::fmt::Display for ItineraryWord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for s in &self.symbols {
            write!(f, "{s}")?;
        }
        if self.hit_critical.is_some() {
            write!(f, "*")?;
        }
        Ok(())
    }
}

/// Two increasing power-law branches separated by a jump at `c`.
///
/// Parameters: `c` in (0,1), `alpha` in (1,100], `u` and `v` in (0,1].
/// The complements `du = 1 - u` and `dv = 1 - v` are stored exactly as
/// given to [`StandardLorenzMap::from_complements`]; the plain constructor
/// derives them by subtraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardLorenzMap {
    c: f64,
    alpha: f64,
    u: f64,
    v: f64,
    du: f64,
    dv: f64,
}

fn check_unit_open(name: &str, x: f64) -> Result<(), MapError> {
    if !(x.is_finite() && 0.0 < x && x < 1.0) {
        return Err(MapError::InvalidParameter(format!(
            "{name} = {x} must lie strictly inside (0,1)"
        )));
    }
    Ok(())
}

impl StandardLorenzMap {
    pub fn new(c: f64, alpha: f64, u: f64, v: f64) -> Result<Self, MapError> {
        for (name, val) in [("u", u), ("v", v)] {
            if !(val.is_finite() && 0.0 < val && val <= 1.0) {
                return Err(MapError::InvalidParameter(format!(
                    "{name} = {val} must lie in (0,1]"
                )));
            }
        }
        Self::from_complements(c, alpha, 1.0 - u, 1.0 - v)
    }

    /// Construct from the complements of the critical values. Preferred
    /// when `u`, `v` are close to 1: the complements are kept exactly.
    pub fn from_complements(c: f64, alpha: f64, du: f64, dv: f64) -> Result<Self, MapError> {
        check_unit_open("c", c)?;
        if !(alpha.is_finite() && ALPHA_MIN < alpha && alpha <= ALPHA_MAX) {
            return Err(MapError::InvalidParameter(format!(
                "alpha = {alpha} must lie in ({ALPHA_MIN},{ALPHA_MAX}]"
            )));
        }
        for (name, val) in [("1-u", du), ("1-v", dv)] {
            if !val.is_finite() || !(0.0..1.0).contains(&val) {
                return Err(MapError::InvalidParameter(format!(
                    "{name} = {val} must lie in [0,1)"
                )));
            }
        }
        Ok(StandardLorenzMap {
            c,
            alpha,
            u: 1.0 - du,
            v: 1.0 - dv,
            du,
            dv,
        })
    }

    /// The surjective member of the family: both critical values extreme.
    pub fn full(c: f64, alpha: f64) -> Result<Self, MapError> {
        Self::from_complements(c, alpha, 0.0, 0.0)
    }

    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn u(&self) -> f64 {
        self.u
    }
    pub fn v(&self) -> f64 {
        self.v
    }
    /// Exact complement `1 - u`.
    pub fn du(&self) -> f64 {
        self.du
    }
    /// Exact complement `1 - v`.
    pub fn dv(&self) -> f64 {
        self.dv
    }

    /// `(f(c-), f(c+)) = (u, 1 - v)`.
    pub fn critical_values(&self) -> (f64, f64) {
        (self.u, self.dv)
    }

    /// The jump at `c` straddles `c` itself: `f(c+) < c < f(c-)`.
    pub fn is_nontrivial(&self) -> bool {
        self.dv < self.c && self.c < self.u
    }

    /// Both branches reach their extreme values exactly.
    pub fn is_full(&self) -> bool {
        self.du == 0.0 && self.dv == 0.0
    }

    /// Conjugation by `x -> 1 - x`, which swaps the branch roles.
    pub fn reflect(&self) -> StandardLorenzMap {
        StandardLorenzMap {
            c: 1.0 - self.c,
            alpha: self.alpha,
            u: self.v,
            v: self.u,
            du: self.dv,
            dv: self.du,
        }
    }

    /// Which branch evaluates `x`, or `None` inside the excluded
    /// neighbourhood of the critical point.
    pub fn side_of(&self, x: f64) -> Option<Side> {
        if (x - self.c).abs() < CRITICAL_EXCLUSION {
            None
        } else if x < self.c {
            Some(Side::Left)
        } else {
            Some(Side::Right)
        }
    }

    /// Left branch on `[0, c)`. Exact at 0; full relative precision for
    /// small values.
    pub(crate) fn eval_minus(&self, x: f64) -> f64 {
        -self.u * f64::exp_m1(self.alpha * f64::ln_1p(-x / self.c))
    }

    /// Right branch on `(c, 1]`. Exact at 1.
    pub(crate) fn eval_plus(&self, x: f64) -> f64 {
        1.0 + self.v * f64::exp_m1(self.alpha * ((x - self.c) / (1.0 - self.c)).ln())
    }

    /// Right branch written so that values near `1 - v` keep relative
    /// precision. Used where an orbit continues on the left branch and the
    /// small value feeds a power law.
    pub(crate) fn eval_plus_small(&self, x: f64) -> f64 {
        self.dv + self.v * ((x - self.c) / (1.0 - self.c)).powf(self.alpha)
    }

    /// `1 - f(x)` for the left branch, with relative precision near `x = 0`
    /// impossible to recover from `eval_minus` output once it rounds.
    /// Valid on `[0, c)`.
    pub(crate) fn minus_gap(&self, x: f64) -> f64 {
        self.du + self.u * ((self.c - x) / self.c).powf(self.alpha)
    }

    /// One right-branch step in the distance-to-1 coordinate `w = 1 - x`:
    /// returns `1 - f(1 - w)`. Valid for `w` in `[0, 1 - c)`; the result
    /// may exceed `1 - c` when the image crosses to the left of `c`.
    pub(crate) fn plus_gap_step(&self, w: f64) -> f64 {
        -self.v * f64::exp_m1(self.alpha * f64::ln_1p(-w / (1.0 - self.c)))
    }

    /// Inverse of the right branch in the gap coordinate: given
    /// `g = 1 - y` with `y` in the branch image, returns `1 - x` where
    /// `f(x) = y`. Valid for `g` in `[0, v]`.
    pub(crate) fn plus_inverse_gap(&self, g: f64) -> f64 {
        (1.0 - self.c) * (-f64::exp_m1(f64::ln_1p(-g / self.v) / self.alpha))
    }

    /// Evaluate the map. Errors inside the excluded neighbourhood of `c`
    /// and outside `[0,1]`.
    pub fn eval(&self, x: f64) -> Result<f64, MapError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(MapError::OutsideDomain { x });
        }
        match self.side_of(x) {
            None => Err(MapError::CriticalPointHit {
                tol: CRITICAL_EXCLUSION,
            }),
            Some(Side::Left) => Ok(self.eval_minus(x)),
            Some(Side::Right) => Ok(self.eval_plus(x)),
        }
    }

    /// One-sided derivative of the branch containing `x` (the branch limit
    /// at 0 and 1, where it equals `alpha*u/c` resp. `alpha*v/(1-c)`).
    pub fn deriv(&self, x: f64) -> Result<f64, MapError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(MapError::OutsideDomain { x });
        }
        match self.side_of(x) {
            None => Err(MapError::CriticalPointHit {
                tol: CRITICAL_EXCLUSION,
            }),
            Some(Side::Left) => Ok(self.alpha * self.u / self.c
                * ((self.c - x) / self.c).powf(self.alpha - 1.0)),
            Some(Side::Right) => Ok(self.alpha * self.v / (1.0 - self.c)
                * ((x - self.c) / (1.0 - self.c)).powf(self.alpha - 1.0)),
        }
    }

    /// Branch derivative at the left fixed point, `alpha*u/c`.
    pub fn deriv_at_zero(&self) -> f64 {
        self.alpha * self.u / self.c
    }

    /// Branch derivative at the right fixed point, `alpha*v/(1-c)`.
    pub fn deriv_at_one(&self) -> f64 {
        self.alpha * self.v / (1.0 - self.c)
    }

    /// Inverse of one branch. Left branch image is `[0, u]`, right branch
    /// image is `[1-v, 1]`; values outside error with `OutOfRange`.
    pub fn branch_inverse(&self, side: Side, y: f64) -> Result<f64, MapError> {
        match side {
            Side::Left => {
                if !(0.0 <= y && y <= self.u) {
                    return Err(MapError::OutOfRange { side, y });
                }
                Ok(self.c * (-f64::exp_m1(f64::ln_1p(-y / self.u) / self.alpha)))
            }
            Side::Right => {
                let g = 1.0 - y;
                if !(0.0 <= g && g <= self.v) {
                    return Err(MapError::OutOfRange { side, y });
                }
                Ok(1.0 - self.plus_inverse_gap(g))
            }
        }
    }

    /// The `k`-th preimage of the critical point along one branch:
    /// `x` with `f^k(x) = c` and the whole forward orbit on that branch.
    /// Errors with `OutOfRange` when the branch image no longer covers the
    /// previous preimage.
    pub fn crit_preimage(&self, side: Side, k: u32) -> Result<f64, MapError> {
        if k == 0 {
            return Ok(self.c);
        }
        match side {
            Side::Left => {
                let mut x = self.branch_inverse(Side::Left, self.c)?;
                for _ in 1..k {
                    x = self.branch_inverse(Side::Left, x)?;
                }
                Ok(x)
            }
            Side::Right => Ok(1.0 - self.crit_preimage_gap(k)?),
        }
    }

    /// Right-branch preimages of `c` in the gap coordinate: returns
    /// `1 - crit_preimage(Right, k)` with full relative precision.
    pub(crate) fn crit_preimage_gap(&self, k: u32) -> Result<f64, MapError> {
        let mut g = 1.0 - self.c;
        for _ in 0..k {
            if g > self.v {
                return Err(MapError::OutOfRange {
                    side: Side::Right,
                    y: 1.0 - g,
                });
            }
            g = self.plus_inverse_gap(g);
        }
        Ok(g)
    }

    /// Iterate up to `n` steps, stopping early at the critical exclusion.
    pub fn iterate(&self, x: f64, n: usize) -> Result<Orbit, MapError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(MapError::OutsideDomain { x });
        }
        let mut points = Vec::with_capacity(n + 1);
        points.push(x);
        let mut hit_critical = None;
        for i in 0..n {
            match self.eval(points[i]) {
                Ok(y) => points.push(y),
                Err(MapError::CriticalPointHit { .. }) => {
                    hit_critical = Some(i);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Orbit {
            points,
            hit_critical,
        })
    }

    /// Branch symbols of the first `n` orbit points, early-stopping like
    /// [`StandardLorenzMap::iterate`].
    pub fn itinerary(&self, x: f64, n: usize) -> Result<ItineraryWord, MapError> {
        let orbit = self.iterate(x, n.saturating_sub(1))?;
        let take = match orbit.hit_critical {
            Some(i) => i,
            None => orbit.points.len().min(n),
        };
        let symbols = orbit.points[..take]
            .iter()
            .map(|&p| if p < self.c { Side::Left } else { Side::Right })
            .collect();
        Ok(ItineraryWord {
            symbols,
            hit_critical: orbit.hit_critical,
        })
    }
}
