//! Experiment configuration files (TOML).
//!
//! ```toml
//! name = "fishwood"
//! seeds = 20
//! output = "runs/fishwood"     # optional, overridden by --out
//! jsonl = false                # also write one JSON record per line
//!
//! [environment]
//! kind = "fishwood"
//! fish_proba = 0.5
//! wood_proba = 0.5
//!
//! [moac]
//! actor_iterations = 400
//! actor_batch_size = 64
//! setting = "discounted"
//! seed = 0                     # seed k of the experiment uses seed + k
//! oracle = true
//! oracle_every = 10
//! actor_step = { kind = "theory", lipschitz = 0.56 }
//! momentum = { kind = "power", exponent = 2.0 }
//! critic = { iterations = 5, batch_size = 64, step = { kind = "fixed", value = 0.1 } }
//!
//! # optional: repeat every seed once per schedule, one sub-directory each
//! [[momentum_sweep]]
//! kind = "power"
//! exponent = 1.0
//! ```

use std::path::{Path, PathBuf};

use moac_core::driver::MoacConfig;
use moac_core::mgda::MomentumSchedule;
use moac_core::momdp::{
    build_fishwood_with_discounts, build_resource_gathering_with, random_momdp, two_state_fixture,
    ResourceLayout, TabularMomdp, FISHWOOD_DISCOUNTS,
};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    Fishwood {
        fish_proba: f64,
        wood_proba: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        discounts: Option<[f64; 2]>,
    },
    ResourceGathering {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attack_probability: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        discount: Option<f64>,
    },
    TwoState,
    Random {
        n_states: usize,
        n_actions: usize,
        n_objectives: usize,
        seed: u64,
    },
    /// A serialized environment document.
    File { path: PathBuf },
}

impl EnvironmentSpec {
    /// Builds the environment; relative file paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<TabularMomdp> {
        Ok(match self {
            EnvironmentSpec::Fishwood { fish_proba, wood_proba, discounts } => build_fishwood_with_discounts(
                *fish_proba,
                *wood_proba,
                discounts.unwrap_or(FISHWOOD_DISCOUNTS),
            )?,
            EnvironmentSpec::ResourceGathering { attack_probability, discount } => {
                let mut layout = ResourceLayout::default();
                if let Some(p) = attack_probability {
                    layout.attack_probability = *p;
                }
                if let Some(g) = discount {
                    layout.discount = *g;
                }
                build_resource_gathering_with(&layout)?
            }
            EnvironmentSpec::TwoState => two_state_fixture(),
            EnvironmentSpec::Random { n_states, n_actions, n_objectives, seed } => {
                if *n_states < 2 || *n_actions < 1 || *n_objectives < 1 {
                    return Err(BenchError::Config("random environment needs >= 2 states".into()));
                }
                random_momdp(*n_states, *n_actions, *n_objectives, *seed)
            }
            EnvironmentSpec::File { path } => {
                let full = if path.is_relative() { base_dir.join(path) } else { path.clone() };
                TabularMomdp::load(&full).map_err(|e| BenchError::Config(format!("{}: {e}", full.display())))?
            }
        })
    }
}

fn default_seeds() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub jsonl: bool,
    pub environment: EnvironmentSpec,
    pub moac: MoacConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub momentum_sweep: Vec<MomentumSchedule>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            BenchError::Config(msg) => BenchError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(BenchError::Config("field `seeds`: must be >= 1".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(BenchError::Config("field `name`: must be a non-empty file-name-safe string".into()));
        }
        self.moac.validate().map_err(|e| BenchError::Config(format!("table `moac`: {e}")))?;
        for (k, schedule) in self.momentum_sweep.iter().enumerate() {
            schedule
                .validate()
                .map_err(|e| BenchError::Config(format!("momentum_sweep[{k}]: {e}")))?;
        }
        Ok(())
    }

    /// Momentum schedules to run: the sweep if present, else the single configured one.
    pub fn schedules(&self) -> Vec<MomentumSchedule> {
        if self.momentum_sweep.is_empty() {
            vec![self.moac.momentum]
        } else {
            self.momentum_sweep.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "demo"
seeds = 3
jsonl = true

[environment]
kind = "fishwood"
fish_proba = 0.5
wood_proba = 0.5

[moac]
actor_iterations = 10
actor_batch_size = 8
setting = "discounted"
seed = 7
oracle = true
oracle_every = 5
actor_step = { kind = "theory", lipschitz = 10.0 }
momentum = { kind = "power", exponent = 1.0 }
critic = { iterations = 2, batch_size = 8, step = { kind = "theory" } }

[[momentum_sweep]]
kind = "power"
exponent = 2.0

[[momentum_sweep]]
kind = "zero"
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.seeds, 3);
        assert_eq!(cfg.schedules().len(), 2);
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = SAMPLE.replace("jsonl = true", "jsonl = true\ncolour = 3");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        let bad = SAMPLE.replace("oracle_every = 5", "oracle_every = 5\nbeta = 1.0");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = ExperimentConfig::from_toml(&SAMPLE.replace("seeds = 3", "seeds = 0")).unwrap_err();
        assert!(err.to_string().contains("seeds"));
        let err = ExperimentConfig::from_toml(&SAMPLE.replace("actor_iterations = 10", "actor_iterations = 0"))
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn builds_every_environment_kind() {
        let specs = [
            EnvironmentSpec::Fishwood { fish_proba: 0.2, wood_proba: 0.7, discounts: Some([0.5, 0.6]) },
            EnvironmentSpec::ResourceGathering { attack_probability: Some(0.2), discount: None },
            EnvironmentSpec::TwoState,
            EnvironmentSpec::Random { n_states: 3, n_actions: 2, n_objectives: 2, seed: 1 },
        ];
        for spec in specs {
            spec.build(Path::new(".")).unwrap();
        }
        let missing = EnvironmentSpec::File { path: "does-not-exist.json".into() };
        assert_eq!(missing.build(Path::new(".")).unwrap_err().exit_code(), 2);
    }
}
