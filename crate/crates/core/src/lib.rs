//! Multi-objective actor-critic (MOAC) on tabular multi-objective MDPs.
//!
//! The crate is split along the learning pipeline:
//!
//! * [`momdp`] holds the environment model, Markovian sampling, the built-in
//!   environments and the exact chain computations used as oracles.
//! * [`policy`] holds softmax policies, feature maps and exact policy gradients.
//! * [`critic`] is the mini-batch TD(0) critic plus its exact fixed point.
//! * [`mgda`] solves the min-norm problem over the simplex and applies momentum.
//! * [`driver`] runs the full actor-critic loop and emits per-iteration metrics.
//! * [`opeval`] scores fixed policies on logged data with capped importance sampling.

pub mod critic;
pub mod driver;
pub mod error;
pub mod mgda;
pub mod momdp;
pub mod opeval;
pub mod policy;

pub use error::{MoacError, Result};

/// Which long-run objective the learners and oracles work with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardSetting {
    Average,
    Discounted,
}

impl std::fmt::Display for RewardSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RewardSetting::Average => f.write_str("average"),
            RewardSetting::Discounted => f.write_str("discounted"),
        }
    }
}
