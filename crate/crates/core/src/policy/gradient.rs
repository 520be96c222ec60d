use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PolicyParams;
use crate::error::{MoacError, Result};
use crate::momdp::{discounted_occupancy, state_values, TabularMomdp};
use crate::RewardSetting;

fn weighted_score_advantage(
    env: &TabularMomdp,
    policy: &PolicyParams,
    weights: &[f64],
    sol: &crate::momdp::ValueSolution,
) -> Vec<f64> {
    let na = env.n_actions();
    let mut grad = vec![0.0; policy.dim()];
    for (s, &ws) in weights.iter().enumerate() {
        if ws == 0.0 {
            continue;
        }
        let pi = policy.action_probabilities(s);
        for (a, &pa) in pi.iter().enumerate() {
            policy.accumulate_score(s, a, ws * pa * sol.advantage(na, s, a), &mut grad);
        }
    }
    grad
}

fn check_objective(env: &TabularMomdp, objective: usize) -> Result<()> {
    if objective >= env.n_objectives() {
        return Err(MoacError::Parameter(format!(
            "objective {objective} out of range (M = {})",
            env.n_objectives()
        )));
    }
    Ok(())
}

/// Exact `∇_θ J^i(θ)` by enumeration of score times advantage.
///
/// In the average setting the states are weighted by `d_θ`. In the discounted
/// setting they are weighted by the discounted occupancy from the initial
/// distribution, which is what differentiating `J = Σ_s ρ(s) V(s)` yields.
pub fn exact_policy_gradient(
    env: &TabularMomdp,
    policy: &PolicyParams,
    objective: usize,
    setting: RewardSetting,
) -> Result<Vec<f64>> {
    check_objective(env, objective)?;
    let sol = state_values(env, policy, setting, objective)?;
    let weights = match setting {
        RewardSetting::Average => sol.stationary.clone(),
        RewardSetting::Discounted => discounted_occupancy(env, policy, env.discounts()[objective])?,
    };
    Ok(weighted_score_advantage(env, policy, &weights, &sol))
}

/// `E_{s~d_θ, a~π_θ}[ψ_θ(s,a) Adv(s,a)]` with the stationary `d_θ` in both settings.
///
/// This is the direction on-policy TD actors estimate from stationary samples.
/// It coincides with [`exact_policy_gradient`] in the average setting.
pub fn stationary_policy_gradient(
    env: &TabularMomdp,
    policy: &PolicyParams,
    objective: usize,
    setting: RewardSetting,
) -> Result<Vec<f64>> {
    check_objective(env, objective)?;
    let sol = state_values(env, policy, setting, objective)?;
    Ok(weighted_score_advantage(env, policy, &sol.stationary, &sol))
}

/// Exact gradients for every objective.
pub fn exact_policy_gradients(
    env: &TabularMomdp,
    policy: &PolicyParams,
    setting: RewardSetting,
) -> Result<Vec<Vec<f64>>> {
    (0..env.n_objectives())
        .map(|i| exact_policy_gradient(env, policy, i, setting))
        .collect()
}

/// Probes the Lipschitz constant of `θ ↦ ∇J^i(θ)` along random segments.
///
/// Draws `n_segments` pairs of tabular parameters with entries in
/// `[-radius, radius]` and returns the largest observed ratio
/// `‖∇J^i(θ) - ∇J^i(θ')‖ / ‖θ - θ'‖` over objectives.
pub fn estimate_gradient_lipschitz(
    env: &TabularMomdp,
    setting: RewardSetting,
    n_segments: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    let (ns, na) = (env.n_states(), env.n_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..n_segments {
        let a: Vec<f64> = (0..ns * na).map(|_| rng.random_range(-radius..=radius)).collect();
        // short segments approximate the local Hessian norm
        let b: Vec<f64> = a.iter().map(|x| x + rng.random_range(-0.05..=0.05)).collect();
        let pa = PolicyParams::tabular(ns, na, a.clone())?;
        let pb = PolicyParams::tabular(ns, na, b.clone())?;
        let dist = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        if dist == 0.0 {
            continue;
        }
        for i in 0..env.n_objectives() {
            let ga = exact_policy_gradient(env, &pa, i, setting)?;
            let gb = exact_policy_gradient(env, &pb, i, setting)?;
            let diff = ga.iter().zip(&gb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            best = best.max(diff / dist);
        }
    }
    Ok(best)
}
