//! Numeric tolerances and resource caps shared across the solvers.

use serde::{Deserialize, Serialize};

/// Absolute half-width of the excluded neighbourhood of the critical point.
/// Evaluation requests inside it are rejected rather than rounded to a side.
pub const CRITICAL_EXCLUSION: f64 = 1e-14;

/// Parameter-space width at which bracketing bisection stops.
pub const BISECTION_TOL: f64 = 1e-12;

/// Slack used when testing interval containment; ties count as contained.
pub const CONTAINMENT_TOL: f64 = 1e-11;

/// Largest acceptable residual |f^T(x) - x| for a solved periodic endpoint.
pub const PERIODICITY_TOL: f64 = 1e-10;

/// Largest acceptable surjectivity residual at a solved parameter vertex.
pub const VERTEX_RESIDUAL_TOL: f64 = 1e-9;

/// Parameter-space width at which island boundary bisection stops.
pub const ISLAND_EDGE_TOL: f64 = 1e-6;

/// Default cap on the base-map iterations spent in one deep evaluation.
pub const RETURN_TIME_CAP: u64 = 10_000_000;

/// Default cap on composition depth.
pub const MAX_DEPTH: usize = 4;

/// Exponent range accepted by the map constructors, exclusive below.
pub const ALPHA_MIN: f64 = 1.0;
/// Exponent range accepted by the map constructors, inclusive above.
pub const ALPHA_MAX: f64 = 100.0;

/// Tolerance bundle passed to the solvers. `Default` reproduces the module
/// constants; every field can be overridden individually (the CLI exposes
/// them as flat config keys).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Tolerances {
    pub critical_exclusion: f64,
    pub bisection: f64,
    pub containment: f64,
    pub periodicity: f64,
    pub vertex_residual: f64,
    pub island_edge: f64,
    pub return_time_cap: u64,
    pub max_depth: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            critical_exclusion: CRITICAL_EXCLUSION,
            bisection: BISECTION_TOL,
            containment: CONTAINMENT_TOL,
            periodicity: PERIODICITY_TOL,
            vertex_residual: VERTEX_RESIDUAL_TOL,
            island_edge: ISLAND_EDGE_TOL,
            return_time_cap: RETURN_TIME_CAP,
            max_depth: MAX_DEPTH,
        }
    }
}
