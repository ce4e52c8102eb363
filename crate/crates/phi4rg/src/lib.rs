//! Renormalisation-group engine for the 4-dimensional n-component |φ|⁴
//! lattice model.
//!
//! The crate computes the free lattice theory (Green function, bubble
//! diagram, pressure), builds a positive-definite multi-scale covariance
//! decomposition of `(-Δ + m²)⁻¹`, evaluates the per-scale coefficients of
//! the second-order coupling flow, iterates the triangular flow with
//! backward boundary conditions to obtain critical trajectories, and
//! reconstructs physical observables: the critical point, the
//! susceptibility with its logarithmic correction, the specific heat, the
//! pressure, and Gaussian scaling-limit pairings.
//!
//! Every piece of the perturbative flow can be certified against an exact
//! symbolic engine (`oracle`) that performs Wick calculus and the
//! localisation projection on small tori by brute force.

pub mod config;
pub mod coefficients;
pub mod decomposition;
pub mod driver;
pub mod fit;
pub mod flow;
pub mod heat;
pub mod lattice;
pub mod observables;
pub mod oracle;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("insufficient resolution: {0}")]
    InsufficientResolution(String),

    #[error("fixed point iteration did not converge: residual {residual:e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("flow step size violation at scale {scale}: 1 - γβg = {value}")]
    StepSizeViolation { scale: usize, value: f64 },

    #[error("kernel range violation: {0}")]
    RangeViolation(String),

    #[error("polynomial degree {degree} exceeds the configured bound {bound}")]
    DegreeOverflow { degree: usize, bound: usize },

    #[error("singular moment system in localisation projection")]
    SingularSystem,

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialisation error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Exit code signalling a declared tolerance violation (as opposed to a
/// usage error, which is exit code 2).
pub const EXIT_TOLERANCE: i32 = 3;
