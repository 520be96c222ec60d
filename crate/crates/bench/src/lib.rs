//! Experiment harness for the multi-objective actor-critic: TOML configs,
//! seeded parallel runs, per-seed CSV metrics and cross-seed summaries.

pub mod config;
pub mod error;
pub mod runner;
pub mod summary;

pub use config::{EnvironmentSpec, ExperimentConfig};
pub use error::{BenchError, Result};
pub use runner::{run_experiment, RunOptions, RunReport};
pub use summary::{summarize, Summary, SummaryDoc};
