//! Tabular multi-objective MDPs.
//!
//! A [`TabularMomdp`] stores the transition kernel as a dense `(s, a, s')`
//! tensor and one deterministic reward table per objective. Rewards are kept
//! in `[0, r_max]`; environments whose native rewards are negative carry the
//! applied per-objective shift in their [`EnvMetadata`].

mod envs;
mod exact;
mod sampler;

pub use envs::{
    build_fishwood, build_fishwood_with_discounts, build_resource_gathering,
    build_resource_gathering_with, random_momdp, two_state_fixture, ResourceLayout,
    FISHWOOD_DISCOUNTS,
};
pub use exact::{
    analyze_chain, compute_exact_objective, compute_stationary_distribution, discounted_occupancy,
    induced_rewards, induced_transition, state_action_values, state_values, ChainStructure,
    ValueSolution,
};
pub use sampler::MarkovSampler;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MoacError, Result};

const ROW_TOL: f64 = 1e-12;

/// Free-form provenance attached to an environment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvMetadata {
    pub name: String,
    /// Constant added to each objective's native reward to make it non-negative.
    #[serde(default)]
    pub reward_shift: Vec<f64>,
    /// Human-readable labels, one per state (may be empty).
    #[serde(default)]
    pub state_labels: Vec<String>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

/// One observed step of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub rewards: Vec<f64>,
    pub next_state: usize,
}

/// A multi-objective MDP with enumerable states and actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMomdp", into = "RawMomdp")]
pub struct TabularMomdp {
    n_states: usize,
    n_actions: usize,
    n_objectives: usize,
    /// Flat `[s][a][s']`.
    transition: Vec<f64>,
    /// Flat `[i][s][a]`.
    reward: Vec<f64>,
    discounts: Vec<f64>,
    initial_distribution: Vec<f64>,
    r_max: f64,
    metadata: EnvMetadata,
}

/// Serialized form; nested vectors keep the JSON readable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMomdp {
    n_states: usize,
    n_actions: usize,
    n_objectives: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<Vec<f64>>>,
    discounts: Vec<f64>,
    initial_distribution: Vec<f64>,
    r_max: f64,
    #[serde(default)]
    metadata: EnvMetadata,
}

impl TryFrom<RawMomdp> for TabularMomdp {
    type Error = MoacError;

    fn try_from(raw: RawMomdp) -> Result<Self> {
        let (ns, na, m) = (raw.n_states, raw.n_actions, raw.n_objectives);
        if raw.transition.len() != ns || raw.transition.iter().any(|r| r.len() != na) {
            return Err(MoacError::Model("transition tensor has wrong shape".into()));
        }
        if raw.reward.len() != m || raw.reward.iter().any(|r| r.len() != ns) {
            return Err(MoacError::Model("reward tensor has wrong shape".into()));
        }
        let mut transition = Vec::with_capacity(ns * na * ns);
        for row in raw.transition.iter().flatten() {
            if row.len() != ns {
                return Err(MoacError::Model("transition row has wrong length".into()));
            }
            transition.extend_from_slice(row);
        }
        let mut reward = Vec::with_capacity(m * ns * na);
        for row in raw.reward.iter().flatten() {
            if row.len() != na {
                return Err(MoacError::Model("reward row has wrong length".into()));
            }
            reward.extend_from_slice(row);
        }
        TabularMomdp::new(
            ns,
            na,
            m,
            transition,
            reward,
            raw.discounts,
            raw.initial_distribution,
            raw.r_max,
            raw.metadata,
        )
    }
}

impl From<TabularMomdp> for RawMomdp {
    fn from(env: TabularMomdp) -> Self {
        let (ns, na, m) = (env.n_states, env.n_actions, env.n_objectives);
        let transition = (0..ns)
            .map(|s| (0..na).map(|a| env.transition_row(s, a).to_vec()).collect())
            .collect();
        let reward = (0..m)
            .map(|i| {
                (0..ns)
                    .map(|s| (0..na).map(|a| env.reward(i, s, a)).collect())
                    .collect()
            })
            .collect();
        RawMomdp {
            n_states: ns,
            n_actions: na,
            n_objectives: m,
            transition,
            reward,
            discounts: env.discounts,
            initial_distribution: env.initial_distribution,
            r_max: env.r_max,
            metadata: env.metadata,
        }
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(MoacError::Model(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(MoacError::Model(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl TabularMomdp {
    /// Builds and validates a model from flat tensors.
    ///
    /// `transition` is laid out `[s][a][s']` and `reward` is laid out `[i][s][a]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        n_objectives: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discounts: Vec<f64>,
        initial_distribution: Vec<f64>,
        r_max: f64,
        metadata: EnvMetadata,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || n_objectives == 0 {
            return Err(MoacError::Model("state, action and objective counts must be positive".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(MoacError::Model("transition tensor has wrong size".into()));
        }
        if reward.len() != n_objectives * n_states * n_actions {
            return Err(MoacError::Model("reward tensor has wrong size".into()));
        }
        if discounts.len() != n_objectives {
            return Err(MoacError::Model("need one discount per objective".into()));
        }
        if let Some(g) = discounts.iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
            return Err(MoacError::Model(format!("discount {g} outside (0, 1)")));
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(MoacError::Model(format!("r_max must be positive, got {r_max}")));
        }
        if let Some(r) = reward.iter().find(|r| !(**r >= 0.0 && **r <= r_max)) {
            return Err(MoacError::Model(format!("reward {r} outside [0, {r_max}]")));
        }
        if initial_distribution.len() != n_states {
            return Err(MoacError::Model("initial distribution has wrong length".into()));
        }
        check_distribution(&initial_distribution, "initial distribution")?;
        for (k, row) in transition.chunks(n_states).enumerate() {
            check_distribution(
                row,
                &format!("transition row (s={}, a={})", k / n_actions, k % n_actions),
            )?;
        }
        Ok(Self {
            n_states,
            n_actions,
            n_objectives,
            transition,
            reward,
            discounts,
            initial_distribution,
            r_max,
            metadata,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_objectives(&self) -> usize {
        self.n_objectives
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn discounts(&self) -> &[f64] {
        &self.discounts
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial_distribution
    }

    pub fn metadata(&self) -> &EnvMetadata {
        &self.metadata
    }

    /// Distribution of the next state given `(state, action)`.
    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        let start = (state * self.n_actions + action) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, objective: usize, state: usize, action: usize) -> f64 {
        self.reward[(objective * self.n_states + state) * self.n_actions + action]
    }

    /// Reward vector over all objectives for `(state, action)`.
    pub fn reward_vector(&self, state: usize, action: usize) -> Vec<f64> {
        (0..self.n_objectives)
            .map(|i| self.reward(i, state, action))
            .collect()
    }

    /// Returns a copy with states, actions and objectives relabeled.
    ///
    /// `state_perm[s]` is the new index of old state `s`; likewise for the
    /// other two permutations.
    pub fn relabeled(
        &self,
        state_perm: &[usize],
        action_perm: &[usize],
        objective_perm: &[usize],
    ) -> Result<Self> {
        let (ns, na, m) = (self.n_states, self.n_actions, self.n_objectives);
        for (p, n, what) in [
            (state_perm, ns, "state"),
            (action_perm, na, "action"),
            (objective_perm, m, "objective"),
        ] {
            let mut seen = vec![false; n];
            if p.len() != n || p.iter().any(|&k| k >= n || std::mem::replace(&mut seen[k], true)) {
                return Err(MoacError::Parameter(format!("invalid {what} permutation")));
            }
        }
        let mut transition = vec![0.0; ns * na * ns];
        let mut reward = vec![0.0; m * ns * na];
        let mut discounts = vec![0.0; m];
        let mut initial = vec![0.0; ns];
        for s in 0..ns {
            initial[state_perm[s]] = self.initial_distribution[s];
            for a in 0..na {
                let row = self.transition_row(s, a);
                let base = (state_perm[s] * na + action_perm[a]) * ns;
                for (s2, &p) in row.iter().enumerate() {
                    transition[base + state_perm[s2]] = p;
                }
                for i in 0..m {
                    reward[(objective_perm[i] * ns + state_perm[s]) * na + action_perm[a]] =
                        self.reward(i, s, a);
                }
            }
        }
        for i in 0..m {
            discounts[objective_perm[i]] = self.discounts[i];
        }
        let mut metadata = self.metadata.clone();
        if metadata.reward_shift.len() == m {
            let mut shift = vec![0.0; m];
            for i in 0..m {
                shift[objective_perm[i]] = metadata.reward_shift[i];
            }
            metadata.reward_shift = shift;
        }
        if metadata.state_labels.len() == ns {
            let mut labels = vec![String::new(); ns];
            for s in 0..ns {
                labels[state_perm[s]] = metadata.state_labels[s].clone();
            }
            metadata.state_labels = labels;
        }
        Self::new(ns, na, m, transition, reward, discounts, initial, self.r_max, metadata)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| MoacError::Data(e.to_string()))
    }

    /// Parses a JSON document and validates every model invariant.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| MoacError::Model(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MoacError::Data(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| MoacError::Data(format!("{}: {e}", path.display())))
    }
}
