use moac_core::critic::{
    compute_td_fixed_point, compute_zeta_approx, expected_td_update, run_critic, CriticConfig, CriticState,
};
use moac_core::driver::{estimate_objective_gradients, expected_gradient_estimate};
use moac_core::momdp::{
    build_fishwood, induced_rewards, induced_transition, random_momdp, state_values, two_state_fixture,
    MarkovSampler, TabularMomdp,
};
use nalgebra::{DMatrix, DVector};
use moac_core::policy::{stationary_policy_gradient, FeatureMap, PolicyParams};
use moac_core::{MoacError, RewardSetting};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SETTINGS: [RewardSetting; 2] = [RewardSetting::Average, RewardSetting::Discounted];

fn random_policy(env: &TabularMomdp, seed: u64) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = (0..env.n_states() * env.n_actions()).map(|_| rng.random_range(-1.0..1.0)).collect();
    PolicyParams::tabular(env.n_states(), env.n_actions(), theta).unwrap()
}

fn pairs() -> Vec<(TabularMomdp, PolicyParams)> {
    let two = two_state_fixture();
    let fish = build_fishwood(0.5, 0.5).unwrap();
    let r1 = random_momdp(4, 2, 2, 31);
    let r2 = random_momdp(6, 3, 3, 32);
    vec![
        (two.clone(), PolicyParams::tabular_uniform(2, 2)),
        (two.clone(), random_policy(&two, 1)),
        (fish.clone(), random_policy(&fish, 2)),
        (r1.clone(), random_policy(&r1, 3)),
        (r2.clone(), random_policy(&r2, 4)),
    ]
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn fixed_point_residual_and_norm_bound() {
    for setting in SETTINGS {
        for (env, policy) in pairs() {
            let f = FeatureMap::default_for(env.n_states()).unwrap();
            let fp = compute_td_fixed_point(&env, &policy, &f, setting).unwrap();
            for i in 0..env.n_objectives() {
                assert!(fp.residual(i) <= 1e-10);
                assert!(norm(&fp.w_star[i]) <= fp.r_w[i]);
                let g = expected_td_update(&env, &policy, &f, setting, i, &fp.w_star[i], fp.j[i]).unwrap();
                assert!(g.iter().all(|x| x.abs() <= 1e-10), "{setting} {}: {g:?}", env.metadata().name);
            }
        }
    }
}

#[test]
fn td_matrix_is_negative_definite_along_random_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for setting in SETTINGS {
        for (env, policy) in pairs() {
            let f = FeatureMap::default_for(env.n_states()).unwrap();
            let fp = compute_td_fixed_point(&env, &policy, &f, setting).unwrap();
            for a in &fp.a {
                for _ in 0..100 {
                    let w = DVector::from_fn(f.dim(), |_, _| rng.random_range(-1.0..1.0));
                    assert!(w.dot(&(a * &w)) < 0.0);
                }
            }
        }
    }
}

/// Bellman solve on the represented states with the zeroed state's value pinned at 0.
fn truncated_values(env: &TabularMomdp, policy: &PolicyParams, objective: usize) -> Vec<f64> {
    let n = env.n_states() - 1;
    let p = induced_transition(env, policy);
    let r = induced_rewards(env, policy, objective);
    let gamma = env.discounts()[objective];
    let lhs = DMatrix::from_fn(n, n, |s, s2| if s == s2 { 1.0 } else { 0.0 } - gamma * p[(s, s2)]);
    let rhs = DVector::from_fn(n, |s, _| r[s]);
    lhs.lu().solve(&rhs).unwrap().as_slice().to_vec()
}

#[test]
fn discounted_one_hot_fixed_point_is_truncated_bellman_solution() {
    for (env, policy) in pairs() {
        let f = FeatureMap::default_for(env.n_states()).unwrap();
        let fp = compute_td_fixed_point(&env, &policy, &f, RewardSetting::Discounted).unwrap();
        for i in 0..env.n_objectives() {
            let v = truncated_values(&env, &policy, i);
            for (s, vs) in v.iter().enumerate() {
                assert!((f.dot(s, &fp.w_star[i]) - vs).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn complete_one_hot_fixed_point_recovers_values() {
    for (env, policy) in pairs() {
        let f = FeatureMap::one_hot(env.n_states()).unwrap();
        let fp = compute_td_fixed_point(&env, &policy, &f, RewardSetting::Discounted).unwrap();
        for i in 0..env.n_objectives() {
            let v = state_values(&env, &policy, RewardSetting::Discounted, i).unwrap().v;
            for s in 0..env.n_states() {
                assert!((f.dot(s, &fp.w_star[i]) - v[s]).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn zeta_vanishes_for_complete_features() {
    let env = random_momdp(4, 2, 2, 40);
    let policy = random_policy(&env, 5);
    let full = FeatureMap::one_hot(4).unwrap();
    let fp = compute_td_fixed_point(&env, &policy, &full, RewardSetting::Discounted).unwrap();
    let z = compute_zeta_approx(&env, &policy, &full, &fp).unwrap();
    assert!(z < 1e-20, "{z:e}");
    for setting in SETTINGS {
        let f = FeatureMap::default_for(4).unwrap();
        let fp = compute_td_fixed_point(&env, &policy, &f, setting).unwrap();
        assert!(compute_zeta_approx(&env, &policy, &f, &fp).unwrap() >= 0.0);
    }
}

#[test]
fn zeta_default_features_matches_enumeration() {
    let env = random_momdp(4, 2, 1, 41);
    let policy = random_policy(&env, 6);
    let f = FeatureMap::default_for(4).unwrap();
    let fp = compute_td_fixed_point(&env, &policy, &f, RewardSetting::Discounted).unwrap();
    let sol = state_values(&env, &policy, RewardSetting::Discounted, 0).unwrap();
    let w = truncated_values(&env, &policy, 0);
    let expected: f64 = (0..4)
        .map(|s| {
            let approx = if s < 3 { w[s] } else { 0.0 };
            sol.stationary[s] * (sol.v[s] - approx).powi(2)
        })
        .sum();
    let zeta = compute_zeta_approx(&env, &policy, &f, &fp).unwrap();
    assert!((zeta - expected).abs() < 1e-10, "{zeta} vs {expected}");
}

#[test]
fn full_one_hot_violates_average_assumption() {
    let env = two_state_fixture();
    let full = FeatureMap::one_hot(2).unwrap();
    assert!(full.check_excludes_constant().is_err());
    let err = compute_td_fixed_point(&env, &PolicyParams::tabular_uniform(2, 2), &full, RewardSetting::Average);
    assert!(matches!(err, Err(MoacError::AssumptionViolation(_))));
}

#[test]
fn permuting_objectives_permutes_critic_weights() {
    let env = random_momdp(4, 2, 3, 50);
    let perm = [2, 0, 1];
    let swapped = env.relabeled(&[0, 1, 2, 3], &[0, 1], &perm).unwrap();
    let policy = random_policy(&env, 7);
    let f = FeatureMap::default_for(4).unwrap();
    let cfg = CriticConfig { step_size: 0.3, iterations: 20, batch_size: 10 };
    for setting in SETTINGS {
        let mut a = CriticState::zeros(3, 3, cfg);
        let mut b = CriticState::zeros(3, 3, cfg);
        run_critic(&mut MarkovSampler::new(&env, 8), &policy, &f, &mut a, setting).unwrap();
        run_critic(&mut MarkovSampler::new(&swapped, 8), &policy, &f, &mut b, setting).unwrap();
        for i in 0..3 {
            assert_eq!(a.weights[i], b.weights[perm[i]]);
        }
    }
}

#[test]
fn zero_rewards_keep_weights_at_zero() {
    let base = random_momdp(3, 2, 1, 60);
    let mut transition = Vec::new();
    for s in 0..3 {
        for a in 0..2 {
            transition.extend_from_slice(base.transition_row(s, a));
        }
    }
    let env = TabularMomdp::new(
        3,
        2,
        1,
        transition,
        vec![0.0; 6],
        vec![0.9],
        base.initial_distribution().to_vec(),
        1.0,
        Default::default(),
    )
    .unwrap();
    let f = FeatureMap::default_for(3).unwrap();
    for setting in SETTINGS {
        let mut st = CriticState::zeros(1, 2, CriticConfig { step_size: 0.5, iterations: 50, batch_size: 5 });
        run_critic(&mut MarkovSampler::new(&env, 1), &PolicyParams::tabular_uniform(3, 2), &f, &mut st, setting)
            .unwrap();
        assert!(st.weights[0].iter().all(|&w| w == 0.0));
    }
}

#[test]
fn theory_step_size_never_diverges() {
    let env = two_state_fixture();
    let policy = PolicyParams::tabular_uniform(2, 2);
    let f = FeatureMap::default_for(2).unwrap();
    for setting in SETTINGS {
        let fp = compute_td_fixed_point(&env, &policy, &f, setting).unwrap();
        let cfg = CriticConfig { step_size: fp.theory_step_size(), iterations: 50, batch_size: 20 };
        for seed in 0..1000 {
            let mut st = CriticState::zeros(2, 1, cfg);
            run_critic(&mut MarkovSampler::new(&env, seed), &policy, &f, &mut st, setting).unwrap();
        }
    }
}

#[test]
fn large_batch_gradient_matches_enumeration_limit() {
    let env = two_state_fixture();
    let policy = PolicyParams::tabular_uniform(2, 2);
    let f = FeatureMap::default_for(2).unwrap();
    let batch = 100_000;
    for setting in SETTINGS {
        let fp = compute_td_fixed_point(&env, &policy, &f, setting).unwrap();
        let limit = expected_gradient_estimate(&env, &policy, &f, &fp.w_star, setting).unwrap();
        let mut sampler = MarkovSampler::new(&env, 77);
        let est =
            estimate_objective_gradients(&mut sampler, &policy, &f, &fp.w_star, batch, setting, 0.01).unwrap();
        for i in 0..2 {
            let diff: Vec<f64> = est.per_objective[i].iter().zip(&limit[i]).map(|(a, b)| a - b).collect();
            let budget = 3.0 * (2.0 * env.r_max() + 2.0 * fp.r_w[i]) / (batch as f64).sqrt();
            assert!(norm(&diff) <= budget, "{setting} obj {i}: {} > {budget}", norm(&diff));
        }
    }
}

#[test]
fn compatible_features_limit_equals_policy_gradient() {
    let env = random_momdp(4, 2, 2, 70);
    let full = FeatureMap::one_hot(4).unwrap();
    for seed in 0..5 {
        let policy = random_policy(&env, seed);
        let fp = compute_td_fixed_point(&env, &policy, &full, RewardSetting::Discounted).unwrap();
        let limit = expected_gradient_estimate(&env, &policy, &full, &fp.w_star, RewardSetting::Discounted).unwrap();
        for i in 0..2 {
            let exact = stationary_policy_gradient(&env, &policy, i, RewardSetting::Discounted).unwrap();
            for (a, b) in limit[i].iter().zip(&exact) {
                assert!((a - b).abs() <= 1e-8, "{a} {b}");
            }
        }
    }
}
