use thiserror::Error;

/// Errors produced by the drift-detection core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("infeasible transport problem: source mass {source_mass} vs sink mass {sink_mass}")]
    InfeasibleMarginals { source_mass: f64, sink_mass: f64 },

    #[error("transport solver exceeded {0} pivots")]
    SolverIterationLimit(usize),

    #[error("QP solver did not converge after {iterations} iterations (best objective {best_value:e})")]
    NotConverged {
        iterations: usize,
        best_value: f64,
        best_weights: Vec<f64>,
    },

    #[error("sample pool too small: need {needed} points, have {available}")]
    PoolTooSmall { needed: usize, available: usize },

    #[error("null samples have zero variance; parametric fit unavailable")]
    ZeroVariance,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown class {class} (world has {classes})")]
    UnknownClass { class: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
