use thiserror::Error;

/// Errors raised by the MOMDP models, oracles and learners.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MoacError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("no convergence after {iterations} iterations (residual gap {gap:e})")]
    Convergence { iterations: usize, gap: f64 },

    #[error("invalid data: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, MoacError>;
