use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid function: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grid spacing mismatch: {0} vs {1}")]
    SpacingMismatch(f64, f64),

    #[error("argument outside the penalty domain at index {index} (value {value})")]
    DomainViolation { index: usize, value: f64 },

    #[error("iteration did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("linear system is singular")]
    SingularSystem,

    #[error("log-log fit is degenerate: {0}")]
    DegenerateFit(String),

    #[error("no sampled point lies in the penalty domain")]
    EmptySample,

    #[error("subdifferential of {0} is not invertible; supply the exact solution explicitly")]
    NotInvertible(&'static str),

    #[error("supplied element is not a subgradient at the given point (violation {0:e})")]
    MembershipFailure(f64),

    #[error("rate hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("penalty {0} is not twice differentiable")]
    NotSmooth(&'static str),

    #[error("noise draw degenerated to zero after {0} attempts")]
    DegenerateNoise(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("adjoint mismatch against dense transpose: {0:e}")]
    AdjointMismatch(f64),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
