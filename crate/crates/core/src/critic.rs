//! Mini-batch TD(0) critic with linear value functions, and its exact fixed point.
//!
//! All `M` objectives are evaluated from the same batch of chained samples;
//! each objective keeps its own weight vector and (in the average setting)
//! its own running average-reward tracker.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{MoacError, Result};
use crate::momdp::{
    compute_stationary_distribution, induced_rewards, induced_transition, state_values, MarkovSampler,
    TabularMomdp, Transition,
};
use crate::policy::{FeatureMap, PolicyParams};
use crate::RewardSetting;

/// Weight magnitude beyond which the critic is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Critic hyper-parameters: step size `β`, outer iterations `N`, batch size `D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticConfig {
    pub step_size: f64,
    pub iterations: usize,
    pub batch_size: usize,
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(MoacError::Parameter(format!("critic step size {} must be positive", self.step_size)));
        }
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(MoacError::Parameter("critic iterations and batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticState {
    /// One weight vector `w^i` per objective.
    pub weights: Vec<Vec<f64>>,
    /// Average-reward trackers `μ^i`; unused in the discounted setting.
    pub avg_reward: Vec<f64>,
    pub config: CriticConfig,
}

impl CriticState {
    /// Zero weights and trackers.
    pub fn zeros(n_objectives: usize, feature_dim: usize, config: CriticConfig) -> Self {
        Self {
            weights: vec![vec![0.0; feature_dim]; n_objectives],
            avg_reward: vec![0.0; n_objectives],
            config,
        }
    }
}

/// Average-reward TD error. Updates the tracker first,
/// `μ ← (1-β)μ + βr`, then returns `(μ, r - μ + φ(s')ᵀw - φ(s)ᵀw)`.
pub fn td_error_average(
    features: &FeatureMap,
    w: &[f64],
    mu_prev: f64,
    step_size: f64,
    transition: &Transition,
    objective: usize,
) -> (f64, f64) {
    let r = transition.rewards[objective];
    let mu = (1.0 - step_size) * mu_prev + step_size * r;
    let delta = r - mu + features.dot(transition.next_state, w) - features.dot(transition.state, w);
    (mu, delta)
}

/// Discounted TD error `r + γ φ(s')ᵀw - φ(s)ᵀw`.
pub fn td_error_discounted(
    features: &FeatureMap,
    w: &[f64],
    gamma: f64,
    transition: &Transition,
    objective: usize,
) -> f64 {
    transition.rewards[objective] + gamma * features.dot(transition.next_state, w)
        - features.dot(transition.state, w)
}

fn check_weights(weights: &[Vec<f64>], iteration: usize) -> Result<()> {
    for (i, w) in weights.iter().enumerate() {
        if let Some(x) = w.iter().find(|x| !x.is_finite() || x.abs() > DIVERGENCE_THRESHOLD) {
            return Err(MoacError::Divergence {
                iteration,
                reason: format!("critic weight for objective {i} reached {x}"),
            });
        }
    }
    Ok(())
}

/// Runs the critic from the sampler's current state; returns the last visited state.
pub fn run_critic(
    sampler: &mut MarkovSampler<'_>,
    policy: &PolicyParams,
    features: &FeatureMap,
    state: &mut CriticState,
    setting: RewardSetting,
) -> Result<usize> {
    run_critic_observed(sampler, policy, features, state, setting, |_, _| {})
}

/// [`run_critic`] with a callback after every outer iteration `k = 1..=N`.
///
/// The trackers `μ^i` are reset to zero at the start of the call; the weights
/// start from whatever `state` holds (warm start).
pub fn run_critic_observed(
    sampler: &mut MarkovSampler<'_>,
    policy: &PolicyParams,
    features: &FeatureMap,
    state: &mut CriticState,
    setting: RewardSetting,
    mut observer: impl FnMut(usize, &[Vec<f64>]),
) -> Result<usize> {
    let CriticConfig { step_size: beta, iterations, batch_size } = state.config;
    state.config.validate()?;
    let env = sampler.env();
    let m = env.n_objectives();
    if state.weights.len() != m || state.weights.iter().any(|w| w.len() != features.dim()) {
        return Err(MoacError::Parameter("critic weights do not match objectives/features".into()));
    }
    state.avg_reward = vec![0.0; m];
    let mut batch = Vec::with_capacity(batch_size);
    let mut acc = vec![0.0; features.dim()];
    for k in 1..=iterations {
        // one shared batch, drawn before any per-objective work
        batch.clear();
        for _ in 0..batch_size {
            batch.push(sampler.step_with_policy(policy));
        }
        for i in 0..m {
            acc.iter_mut().for_each(|x| *x = 0.0);
            let w = &state.weights[i];
            let mut mu = state.avg_reward[i];
            for tr in &batch {
                let delta = match setting {
                    RewardSetting::Average => {
                        let (mu_new, delta) = td_error_average(features, w, mu, beta, tr, i);
                        mu = mu_new;
                        delta
                    }
                    RewardSetting::Discounted => td_error_discounted(features, w, env.discounts()[i], tr, i),
                };
                features.add_scaled(tr.state, delta, &mut acc);
            }
            state.avg_reward[i] = mu;
            let scale = beta / batch_size as f64;
            for (wk, ak) in state.weights[i].iter_mut().zip(&acc) {
                *wk += scale * ak;
            }
        }
        check_weights(&state.weights, k)?;
        observer(k, &state.weights);
    }
    Ok(sampler.current_state())
}

/// Exact TD fixed point of every objective under a fixed policy.
#[derive(Debug, Clone)]
pub struct TdFixedPoint {
    pub setting: RewardSetting,
    /// `A` per objective (identical across objectives in the average setting).
    pub a: Vec<DMatrix<f64>>,
    /// `b^i` (average) or `b'^i` (discounted).
    pub b: Vec<DVector<f64>>,
    /// `w^{i,*} = -A⁻¹ b^i`.
    pub w_star: Vec<Vec<f64>>,
    /// `-λ_max(A + Aᵀ)` per objective.
    pub lambda_a: Vec<f64>,
    /// Norm bound on `w^{i,*}`: `4 r_max/λ_A` (average) or `2 r_max/λ_A` (discounted).
    pub r_w: Vec<f64>,
    /// Exact objective values used to centre `b` in the average setting.
    pub j: Vec<f64>,
}

impl TdFixedPoint {
    pub fn n_objectives(&self) -> usize {
        self.w_star.len()
    }

    /// Smallest spectral margin over objectives.
    pub fn min_lambda_a(&self) -> f64 {
        self.lambda_a.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `C_A = ‖A‖_F + 1e-6`, a strict upper bound on the Frobenius norm.
    pub fn c_a(&self, objective: usize) -> f64 {
        self.a[objective].norm() + 1e-6
    }

    /// Largest critic step size with `β ≤ min{λ_A/(8C_A²), 4/λ_A}` for every
    /// objective, additionally capped at 1 so the `(1-β)` tracker recursion
    /// stays a convex combination.
    pub fn theory_step_size(&self) -> f64 {
        (0..self.n_objectives())
            .map(|i| {
                let lam = self.lambda_a[i];
                let ca = self.c_a(i);
                (lam / (8.0 * ca * ca)).min(4.0 / lam)
            })
            .fold(1.0, f64::min)
    }

    /// `‖A w^{i,*} + b^i‖_∞`.
    pub fn residual(&self, objective: usize) -> f64 {
        let w = DVector::from_column_slice(&self.w_star[objective]);
        (&self.a[objective] * w + &self.b[objective]).amax()
    }

    /// `‖w^i - w^{i,*}‖²` per objective.
    pub fn critic_errors(&self, weights: &[Vec<f64>]) -> Vec<f64> {
        weights
            .iter()
            .zip(&self.w_star)
            .map(|(w, ws)| w.iter().zip(ws).map(|(x, y)| (x - y).powi(2)).sum())
            .collect()
    }
}

/// Computes `A`, `b`, `w*`, `λ_A` and `R_w` by enumeration over `(s, a, s')`
/// weighted by `d_θ(s) π_θ(a|s) P(s'|s,a)`.
pub fn compute_td_fixed_point(
    env: &TabularMomdp,
    policy: &PolicyParams,
    features: &FeatureMap,
    setting: RewardSetting,
) -> Result<TdFixedPoint> {
    if features.n_states() != env.n_states() {
        return Err(MoacError::Parameter("feature map does not cover the state space".into()));
    }
    let n = env.n_states();
    let m = env.n_objectives();
    let p = induced_transition(env, policy);
    let d = DVector::from_vec(compute_stationary_distribution(env, policy)?);
    let phi = features.matrix();
    let dphi = DMatrix::from_diagonal(&d) * &phi;
    let ident = DMatrix::<f64>::identity(n, n);

    let mut a_mats = Vec::with_capacity(m);
    let mut b_vecs = Vec::with_capacity(m);
    let mut w_star = Vec::with_capacity(m);
    let mut lambda_a = Vec::with_capacity(m);
    let mut r_w = Vec::with_capacity(m);
    let mut j = Vec::with_capacity(m);
    for i in 0..m {
        let r = induced_rewards(env, policy, i);
        let ji = d.dot(&r);
        let (coef, centred) = match setting {
            RewardSetting::Average => (1.0, r.add_scalar(-ji)),
            RewardSetting::Discounted => (env.discounts()[i], r),
        };
        // A = Σ_s d(s) φ(s) (c·E[φ(s')|s] - φ(s))ᵀ, the matrix the TD update applies to w
        let a = dphi.transpose() * ((&p * coef - &ident) * &phi);
        let b = dphi.transpose() * centred;
        let sym = &a + a.transpose();
        let lam = -SymmetricEigen::new(sym).eigenvalues.max();
        if lam <= 1e-10 {
            return Err(MoacError::AssumptionViolation(format!(
                "lambda_A = {lam:e} for objective {i}: A + Aᵀ is not negative definite"
            )));
        }
        let w = a
            .clone()
            .lu()
            .solve(&(-&b))
            .ok_or_else(|| MoacError::AssumptionViolation("A is singular".into()))?;
        let bound = match setting {
            RewardSetting::Average => 4.0 * env.r_max() / lam,
            RewardSetting::Discounted => 2.0 * env.r_max() / lam,
        };
        a_mats.push(a);
        b_vecs.push(b);
        w_star.push(w.as_slice().to_vec());
        lambda_a.push(lam);
        r_w.push(bound);
        j.push(ji);
    }
    Ok(TdFixedPoint {
        setting,
        a: a_mats,
        b: b_vecs,
        w_star,
        lambda_a,
        r_w,
        j,
    })
}

/// Critic approximation error `max_i E_{s~d_θ}[|V^i(s) - φ(s)ᵀw^{i,*}|²]`.
///
/// In the average setting the differential value is only defined up to an
/// additive constant, so the residual is centred under `d_θ` first.
pub fn compute_zeta_approx(
    env: &TabularMomdp,
    policy: &PolicyParams,
    features: &FeatureMap,
    fixed_point: &TdFixedPoint,
) -> Result<f64> {
    let mut zeta: f64 = 0.0;
    for i in 0..env.n_objectives() {
        let sol = state_values(env, policy, fixed_point.setting, i)?;
        let resid: Vec<f64> = (0..env.n_states())
            .map(|s| sol.v[s] - features.dot(s, &fixed_point.w_star[i]))
            .collect();
        let d = &sol.stationary;
        let mean: f64 = match fixed_point.setting {
            RewardSetting::Average => d.iter().zip(&resid).map(|(p, e)| p * e).sum(),
            RewardSetting::Discounted => 0.0,
        };
        let err: f64 = d.iter().zip(&resid).map(|(p, e)| p * (e - mean).powi(2)).sum();
        zeta = zeta.max(err);
    }
    Ok(zeta)
}

/// `E_{d_θ}[δ^i(w) φ(s)]` by exact enumeration, with the tracker held at `mu`
/// in the average setting. Zero exactly at the TD fixed point when `mu = J^i`.
pub fn expected_td_update(
    env: &TabularMomdp,
    policy: &PolicyParams,
    features: &FeatureMap,
    setting: RewardSetting,
    objective: usize,
    w: &[f64],
    mu: f64,
) -> Result<Vec<f64>> {
    let d = compute_stationary_distribution(env, policy)?;
    let mut out = vec![0.0; features.dim()];
    for (s, &ds) in d.iter().enumerate() {
        let pi = policy.action_probabilities(s);
        for (a, &pa) in pi.iter().enumerate() {
            for (s2, &q) in env.transition_row(s, a).iter().enumerate() {
                if q == 0.0 {
                    continue;
                }
                let tr = Transition {
                    state: s,
                    action: a,
                    rewards: env.reward_vector(s, a),
                    next_state: s2,
                };
                let delta = match setting {
                    RewardSetting::Average => {
                        tr.rewards[objective] - mu + features.dot(s2, w) - features.dot(s, w)
                    }
                    RewardSetting::Discounted => {
                        td_error_discounted(features, w, env.discounts()[objective], &tr, objective)
                    }
                };
                features.add_scaled(s, ds * pa * q * delta, &mut out);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momdp::two_state_fixture;

    fn transition(r: f64) -> Transition {
        Transition { state: 0, action: 0, rewards: vec![r], next_state: 1 }
    }

    #[test]
    fn average_td_error_values() {
        let f = FeatureMap::new(3, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let tr = Transition { state: 0, action: 0, rewards: vec![1.0], next_state: 1 };
        let (mu, delta) = td_error_average(&f, &[2.0, 3.0], 0.0, 0.1, &tr, 0);
        assert!((mu - 0.1).abs() < 1e-15);
        assert!((delta - 0.9).abs() < 1e-15);
        let tr = Transition { rewards: vec![0.7], ..tr };
        let (mu, delta) = td_error_average(&f, &[2.0, 3.0], 0.7, 0.1, &tr, 0);
        assert!((mu - 0.7).abs() < 1e-15);
        assert!(delta.abs() < 1e-15);
    }

    #[test]
    fn discounted_td_error_values() {
        let f = FeatureMap::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let tr = transition(1.0);
        assert!((td_error_discounted(&f, &[1.0, 2.0], 0.9, &tr, 0) - 1.8).abs() < 1e-15);
        assert_eq!(td_error_discounted(&f, &[0.0, 0.0], 0.9, &tr, 0), 1.0);
    }

    #[test]
    fn single_sample_single_iteration_is_vanilla_td() {
        let env = two_state_fixture();
        let policy = PolicyParams::tabular_uniform(2, 2);
        let f = FeatureMap::default_for(2).unwrap();
        let config = CriticConfig { step_size: 0.3, iterations: 1, batch_size: 1 };
        let mut state = CriticState { weights: vec![vec![0.5], vec![-0.2]], avg_reward: vec![0.0; 2], config };
        let mut sampler = MarkovSampler::with_state(&env, 0, 11);
        let mut replay = sampler.clone();
        run_critic(&mut sampler, &policy, &f, &mut state, RewardSetting::Discounted).unwrap();
        let tr = replay.step_with_policy(&policy);
        for (i, w0) in [0.5, -0.2].into_iter().enumerate() {
            let delta = td_error_discounted(&f, &[w0], env.discounts()[i], &tr, i);
            let expected = w0 + 0.3 * delta * f.row(tr.state)[0];
            assert!((state.weights[i][0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn divergence_is_reported_with_iteration() {
        let env = two_state_fixture();
        let policy = PolicyParams::tabular_uniform(2, 2);
        let f = FeatureMap::default_for(2).unwrap();
        let config = CriticConfig { step_size: 1e13, iterations: 5, batch_size: 4 };
        let mut state = CriticState::zeros(2, 1, config);
        let mut sampler = MarkovSampler::with_state(&env, 0, 1);
        let err = run_critic(&mut sampler, &policy, &f, &mut state, RewardSetting::Discounted).unwrap_err();
        assert!(matches!(err, MoacError::Divergence { iteration: 1, .. }), "{err}");
    }

    #[test]
    fn fixed_point_residual_and_bound() {
        let env = two_state_fixture();
        let policy = PolicyParams::tabular(2, 2, vec![0.3, -0.1, 0.2, 0.5]).unwrap();
        let f = FeatureMap::default_for(2).unwrap();
        for setting in [RewardSetting::Average, RewardSetting::Discounted] {
            let fp = compute_td_fixed_point(&env, &policy, &f, setting).unwrap();
            for i in 0..2 {
                assert!(fp.residual(i) <= 1e-10);
                let norm = fp.w_star[i].iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(norm <= fp.r_w[i]);
            }
            let beta = fp.theory_step_size();
            assert!(beta > 0.0 && beta <= 1.0);
        }
    }

    #[test]
    fn full_one_hot_fails_average_assumption() {
        let env = two_state_fixture();
        let policy = PolicyParams::tabular_uniform(2, 2);
        let f = FeatureMap::one_hot(2).unwrap();
        let err = compute_td_fixed_point(&env, &policy, &f, RewardSetting::Average).unwrap_err();
        assert!(matches!(err, MoacError::AssumptionViolation(_)));
    }
}
