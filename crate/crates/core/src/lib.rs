//! Numerical toolkit for Lorenz maps with a critical discontinuity.
//!
//! The crate is organised around one concrete object, the standard
//! two-branch power-law map on `[0,1]` ([`map::StandardLorenzMap`]), and the
//! operations that matter when such a map has nested first-return structure:
//!
//! * [`renorm`] locates return intervals, validates return combinatorics and
//!   composes first-return maps to arbitrary (capped) depth;
//! * [`family`] solves for the parameter values where a prescribed return
//!   type becomes surjective and estimates how the rescaled critical point
//!   moves with the return type;
//! * [`measures`] tracks return-time and symbol-count bookkeeping across
//!   depth, pushes measure coefficients between levels, and estimates
//!   absolutely continuous invariant statistics by direct simulation;
//! * [`construction`] assembles multi-level schedules whose orbit statistics
//!   oscillate between the two branches, and measures those orbits;
//! * [`acceptance`] bundles the end-to-end checks used by the test suite and
//!   the `verify` subcommand of the CLI.

pub mod acceptance;
pub mod config;
pub mod construction;
pub mod family;
pub mod map;
pub mod measures;
pub mod renorm;

pub use config::Tolerances;
pub use construction::{
    BirkhoffReport, CombinatoricsSchedule, ConstructionState, OrbitStats,
};
pub use family::{FamilySpec, GammaEstimate, IslandRecord};
pub use map::{Side, StandardLorenzMap};
pub use measures::{AcimEstimate, MeasureVector, ReturnTimes, WindingMatrix};
pub use renorm::{RenormCheck, RenormRecord, ReturnInterval, ScheduledMap};
