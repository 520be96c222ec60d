//! The full multi-objective actor-critic loop.
//!
//! Each actor iteration `t` runs the critic from wherever the chain stopped,
//! draws an actor batch that continues the same chain, forms one TD-weighted
//! score estimate per objective, solves the min-norm problem on them, mixes
//! the result into the running weights with momentum `η_t` and ascends
//! `θ ← θ + α g_t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{compute_td_fixed_point, run_critic, CriticConfig, CriticState, TdFixedPoint};
use crate::error::{MoacError, Result};
use crate::mgda::{momentum_update, solve_min_norm, MomentumSchedule, SimplexWeights};
use crate::momdp::{
    compute_exact_objective, compute_stationary_distribution, MarkovSampler, TabularMomdp,
};
use crate::policy::{exact_policy_gradients, FeatureMap, PolicyParams};
use crate::RewardSetting;

/// Actor step size `α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActorStepSize {
    Fixed { value: f64 },
    /// `α = 1/(3 L)` for a supplied gradient-Lipschitz estimate `L`.
    Theory { lipschitz: f64 },
}

impl ActorStepSize {
    pub fn value(&self) -> f64 {
        match *self {
            ActorStepSize::Fixed { value } => value,
            ActorStepSize::Theory { lipschitz } => 1.0 / (3.0 * lipschitz),
        }
    }
}

/// Default gradient-Lipschitz estimate for the built-in fixtures.
pub const DEFAULT_LIPSCHITZ: f64 = 10.0;

/// Critic step size `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CriticStepSize {
    Fixed { value: f64 },
    /// Recomputed every actor iteration from the exact TD matrix of the current policy.
    Theory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticSettings {
    pub step: CriticStepSize,
    pub iterations: usize,
    pub batch_size: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoacConfig {
    pub actor_iterations: usize,
    pub actor_batch_size: usize,
    pub actor_step: ActorStepSize,
    pub momentum: MomentumSchedule,
    pub critic: CriticSettings,
    pub setting: RewardSetting,
    pub seed: u64,
    /// Attach exact-oracle diagnostics to the metrics stream.
    #[serde(default)]
    pub oracle: bool,
    /// Oracle diagnostics are computed at `t = 1`, at multiples of `every` and at `t = T`.
    #[serde(default = "one")]
    pub oracle_every: usize,
}

impl MoacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.actor_iterations == 0 || self.actor_batch_size == 0 {
            return Err(MoacError::Parameter("actor iterations and batch size must be >= 1".into()));
        }
        let alpha = self.actor_step.value();
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(MoacError::Parameter(format!("actor step size {alpha} must be positive")));
        }
        if let CriticStepSize::Fixed { value } = self.critic.step {
            CriticConfig { step_size: value, iterations: self.critic.iterations, batch_size: self.critic.batch_size }
                .validate()?;
        } else if self.critic.iterations == 0 || self.critic.batch_size == 0 {
            return Err(MoacError::Parameter("critic iterations and batch size must be >= 1".into()));
        }
        if self.oracle_every == 0 {
            return Err(MoacError::Parameter("oracle_every must be >= 1".into()));
        }
        self.momentum.validate()
    }
}

/// One row of the per-iteration metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: usize,
    /// Mean reward per objective over the actor batch.
    pub reward_mean: Vec<f64>,
    /// `‖g_t‖²`.
    pub grad_norm_sq: f64,
    pub lambda: Vec<f64>,
    pub eta_t: f64,
    /// `‖w^i_t - w^{i,*}_t‖²` per objective.
    pub critic_err: Option<Vec<f64>>,
    pub j_exact: Option<Vec<f64>>,
    pub pareto_gap: Option<f64>,
}

/// Per-objective gradient estimates and their combination.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub per_objective: Vec<Vec<f64>>,
    pub combined: Vec<f64>,
    pub weights: SimplexWeights,
}

impl GradientEstimate {
    pub fn new(per_objective: Vec<Vec<f64>>, weights: SimplexWeights) -> Self {
        let combined = weights.combine(&per_objective);
        Self { per_objective, combined, weights }
    }
}

/// Output of one actor batch before the weights are chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGradients {
    /// `g^i_t = (1/B) Σ_l δ^i_{t,l} ψ_{t,l}`.
    pub per_objective: Vec<Vec<f64>>,
    pub reward_mean: Vec<f64>,
}

/// Draws `batch_size` chained samples and forms one gradient estimate per objective.
///
/// The average-reward trackers start at zero and follow
/// `μ ← (1-α)μ + α r` with the actor step size `α`.
pub fn estimate_objective_gradients(
    sampler: &mut MarkovSampler<'_>,
    policy: &PolicyParams,
    features: &FeatureMap,
    critic_weights: &[Vec<f64>],
    batch_size: usize,
    setting: RewardSetting,
    actor_step: f64,
) -> Result<ObjectiveGradients> {
    let env = sampler.env();
    let m = env.n_objectives();
    if critic_weights.len() != m {
        return Err(MoacError::Parameter(format!(
            "need critic weights for {m} objectives, got {}",
            critic_weights.len()
        )));
    }
    if batch_size == 0 {
        return Err(MoacError::Parameter("actor batch size must be >= 1".into()));
    }
    let mut grads = vec![vec![0.0; policy.dim()]; m];
    let mut mu = vec![0.0; m];
    let mut reward_sum = vec![0.0; m];
    let scale = 1.0 / batch_size as f64;
    for _ in 0..batch_size {
        let tr = sampler.step_with_policy(policy);
        for i in 0..m {
            let r = tr.rewards[i];
            reward_sum[i] += r;
            let v_next = features.dot(tr.next_state, &critic_weights[i]);
            let v_here = features.dot(tr.state, &critic_weights[i]);
            let delta = match setting {
                RewardSetting::Average => {
                    mu[i] = (1.0 - actor_step) * mu[i] + actor_step * r;
                    r - mu[i] + v_next - v_here
                }
                RewardSetting::Discounted => r + env.discounts()[i] * v_next - v_here,
            };
            policy.accumulate_score(tr.state, tr.action, scale * delta, &mut grads[i]);
        }
    }
    Ok(ObjectiveGradients {
        per_objective: grads,
        reward_mean: reward_sum.iter().map(|s| s * scale).collect(),
    })
}

/// Large-batch limit of [`estimate_objective_gradients`]:
/// `Δ^i = E_{d_θ, π_θ, P}[δ^i(w) ψ_θ(s,a)]`, with the tracker held at `J^i`
/// in the average setting.
pub fn expected_gradient_estimate(
    env: &TabularMomdp,
    policy: &PolicyParams,
    features: &FeatureMap,
    critic_weights: &[Vec<f64>],
    setting: RewardSetting,
) -> Result<Vec<Vec<f64>>> {
    let d = compute_stationary_distribution(env, policy)?;
    let j = compute_exact_objective(env, policy, RewardSetting::Average)?;
    let m = env.n_objectives();
    let mut out = vec![vec![0.0; policy.dim()]; m];
    for (s, &ds) in d.iter().enumerate() {
        let pi = policy.action_probabilities(s);
        for (a, &pa) in pi.iter().enumerate() {
            for i in 0..m {
                let w = &critic_weights[i];
                let next: f64 = env
                    .transition_row(s, a)
                    .iter()
                    .enumerate()
                    .map(|(s2, q)| q * features.dot(s2, w))
                    .sum();
                let r = env.reward(i, s, a);
                let delta = match setting {
                    RewardSetting::Average => r - j[i] + next - features.dot(s, w),
                    RewardSetting::Discounted => r + env.discounts()[i] * next - features.dot(s, w),
                };
                policy.accumulate_score(s, a, ds * pa * delta, &mut out[i]);
            }
        }
    }
    Ok(out)
}

/// `min_{λ ∈ simplex} ‖Σ_i λ_i ∇J^i(θ)‖²` from exact gradients.
pub fn pareto_stationarity_gap(env: &TabularMomdp, policy: &PolicyParams, setting: RewardSetting) -> Result<f64> {
    let grads = exact_policy_gradients(env, policy, setting)?;
    Ok(solve_min_norm(&grads)?.min_norm_sq)
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct MoacRun {
    /// Parameters after the last update.
    pub final_policy: PolicyParams,
    /// Parameters used at the uniformly drawn iteration `t_hat`.
    pub sampled_policy: PolicyParams,
    pub t_hat: usize,
    pub records: Vec<MetricsRecord>,
}

const T_HAT_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Runs the actor-critic with default features and a uniform tabular softmax start.
pub fn run_moac(env: &TabularMomdp, config: &MoacConfig) -> Result<MoacRun> {
    let features = FeatureMap::default_for(env.n_states())?;
    let policy = PolicyParams::tabular_uniform(env.n_states(), env.n_actions());
    run_moac_with(env, &features, policy, config)
}

pub fn run_moac_with(
    env: &TabularMomdp,
    features: &FeatureMap,
    initial_policy: PolicyParams,
    config: &MoacConfig,
) -> Result<MoacRun> {
    run_moac_observed(env, features, initial_policy, config, |_, _| {})
}

/// [`run_moac_with`] with a callback receiving each record and the gradient
/// estimate behind it as they are produced.
pub fn run_moac_observed(
    env: &TabularMomdp,
    features: &FeatureMap,
    initial_policy: PolicyParams,
    config: &MoacConfig,
    mut on_record: impl FnMut(&MetricsRecord, &GradientEstimate),
) -> Result<MoacRun> {
    config.validate()?;
    if features.n_states() != env.n_states() || initial_policy.n_states() != env.n_states() {
        return Err(MoacError::Parameter("features/policy do not match the environment".into()));
    }
    let m = env.n_objectives();
    let setting = config.setting;
    let alpha = config.actor_step.value();
    let big_t = config.actor_iterations;
    let t_hat = ChaCha8Rng::seed_from_u64(config.seed ^ T_HAT_STREAM).random_range(1..=big_t);

    let mut sampler = MarkovSampler::new(env, config.seed);
    let initial_beta = match config.critic.step {
        CriticStepSize::Fixed { value } => value,
        CriticStepSize::Theory => 1.0,
    };
    let mut critic = CriticState::zeros(
        m,
        features.dim(),
        CriticConfig {
            step_size: initial_beta,
            iterations: config.critic.iterations,
            batch_size: config.critic.batch_size,
        },
    );
    let mut policy = initial_policy;
    let mut sampled_policy = policy.clone();
    let mut lambda = SimplexWeights::uniform(m);
    let mut records = Vec::with_capacity(big_t);

    for t in 1..=big_t {
        let want_oracle = config.oracle && (t == 1 || t % config.oracle_every == 0 || t == big_t);
        let mut fixed_point: Option<TdFixedPoint> = None;
        if config.critic.step == CriticStepSize::Theory {
            let fp = compute_td_fixed_point(env, &policy, features, setting)?;
            critic.config.step_size = fp.theory_step_size();
            fixed_point = Some(fp);
        }

        run_critic(&mut sampler, &policy, features, &mut critic, setting).map_err(|e| match e {
            MoacError::Divergence { iteration, reason } => MoacError::Divergence {
                iteration: t,
                reason: format!("critic inner iteration {iteration}: {reason}"),
            },
            other => other,
        })?;

        let (critic_err, j_exact, pareto_gap) = if want_oracle {
            let fp = match fixed_point {
                Some(fp) => fp,
                None => compute_td_fixed_point(env, &policy, features, setting)?,
            };
            (
                Some(fp.critic_errors(&critic.weights)),
                Some(compute_exact_objective(env, &policy, setting)?),
                Some(pareto_stationarity_gap(env, &policy, setting)?),
            )
        } else {
            (None, None, None)
        };

        let batch = estimate_objective_gradients(
            &mut sampler,
            &policy,
            features,
            &critic.weights,
            config.actor_batch_size,
            setting,
            alpha,
        )?;
        let qp = solve_min_norm(&batch.per_objective)?;
        let eta = config.momentum.eta(t);
        lambda = momentum_update(&lambda, &qp.weights, eta)?;
        let estimate = GradientEstimate::new(batch.per_objective, lambda.clone());
        let grad_norm_sq = estimate.combined.iter().map(|x| x * x).sum();

        let record = MetricsRecord {
            t,
            reward_mean: batch.reward_mean,
            grad_norm_sq,
            lambda: lambda.as_slice().to_vec(),
            eta_t: eta,
            critic_err,
            j_exact,
            pareto_gap,
        };
        on_record(&record, &estimate);
        records.push(record);

        if t == t_hat {
            sampled_policy = policy.clone();
        }
        policy.ascend(&estimate.combined, alpha).map_err(|e| MoacError::Divergence {
            iteration: t,
            reason: format!("actor update: {e}"),
        })?;
    }

    Ok(MoacRun {
        final_policy: policy,
        sampled_policy,
        t_hat,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momdp::{two_state_fixture, EnvMetadata};

    fn config(momentum: MomentumSchedule, t: usize) -> MoacConfig {
        MoacConfig {
            actor_iterations: t,
            actor_batch_size: 16,
            actor_step: ActorStepSize::Fixed { value: 0.1 },
            momentum,
            critic: CriticSettings { step: CriticStepSize::Fixed { value: 0.5 }, iterations: 3, batch_size: 16 },
            setting: RewardSetting::Discounted,
            seed: 5,
            oracle: true,
            oracle_every: 1,
        }
    }

    #[test]
    fn zero_rewards_give_zero_gradients() {
        let env = TabularMomdp::new(
            2,
            2,
            2,
            vec![0.5; 8],
            vec![0.0; 8],
            vec![0.9, 0.9],
            vec![1.0, 0.0],
            1.0,
            EnvMetadata::default(),
        )
        .unwrap();
        let policy = PolicyParams::tabular_uniform(2, 2);
        let f = FeatureMap::default_for(2).unwrap();
        let mut sampler = MarkovSampler::new(&env, 3);
        let g = estimate_objective_gradients(
            &mut sampler,
            &policy,
            &f,
            &[vec![0.0], vec![0.0]],
            50,
            RewardSetting::Average,
            0.1,
        )
        .unwrap();
        assert!(g.per_objective.iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn zero_momentum_keeps_uniform_weights() {
        let env = two_state_fixture();
        let run = run_moac(&env, &config(MomentumSchedule::Zero, 10)).unwrap();
        for r in &run.records {
            assert_eq!(r.lambda, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn power_schedule_starts_at_qp_solution() {
        let env = two_state_fixture();
        let run = run_moac(&env, &config(MomentumSchedule::Power { exponent: 1.0 }, 3)).unwrap();
        assert_eq!(run.records[0].eta_t, 1.0);
        assert!(run.t_hat >= 1 && run.t_hat <= 3);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = config(MomentumSchedule::Zero, 0);
        assert!(run_moac(&two_state_fixture(), &c).is_err());
        c.actor_iterations = 2;
        c.momentum = MomentumSchedule::Constant { value: 2.0 };
        assert!(run_moac(&two_state_fixture(), &c).is_err());
    }

    #[test]
    fn actor_divergence_names_iteration() {
        let mut c = config(MomentumSchedule::Zero, 5);
        c.actor_step = ActorStepSize::Fixed { value: f64::MAX };
        let env = two_state_fixture();
        let f = FeatureMap::default_for(2).unwrap();
        let start = PolicyParams::tabular(2, 2, vec![0.99 * f64::MAX; 4]).unwrap();
        let err = run_moac_with(&env, &f, start, &c).unwrap_err();
        assert!(matches!(err, MoacError::Divergence { iteration: 1, .. }), "{err}");
    }
}
