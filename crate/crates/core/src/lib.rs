//! Numerical laboratory for two-dimensional optimal stopping of jump-diffusions.
//!
//! The crate solves the obstacle problem for the value function on a
//! truncated box, extracts the stopping surface `x*(t, y)`, checks the
//! regularity hypotheses under which that surface is continuous, and
//! cross-validates everything by Monte Carlo.

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod exprs;
pub mod model;
pub mod operators;
pub mod solver;
pub mod boundary;
pub mod hypotheses;
pub mod montecarlo;
