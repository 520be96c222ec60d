use moac_core::MoacError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("seed {seed} diverged at iteration {iteration}: {reason}")]
    Divergence { seed: u64, iteration: usize, reason: String },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] MoacError),
}

impl BenchError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Schema(_) => 2,
            BenchError::Divergence { .. } => 3,
            BenchError::Core(MoacError::Parameter(_)) => 2,
            BenchError::Core(MoacError::Divergence { .. }) => 3,
            BenchError::Io(_) | BenchError::Core(_) => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        BenchError::Io(format!("{}: {err}", path.display()))
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
