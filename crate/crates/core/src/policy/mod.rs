//! Softmax policies, score functions and exact policy gradients.

mod features;
mod gradient;

pub use features::FeatureMap;
pub use gradient::{
    estimate_gradient_lipschitz, exact_policy_gradient, exact_policy_gradients,
    stationary_policy_gradient,
};

use serde::{Deserialize, Serialize};

use crate::error::{MoacError, Result};

/// How logits are formed from `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Parameterization {
    /// One logit per `(s, a)`; `θ[s·|A| + a]`.
    Tabular { n_states: usize, n_actions: usize },
    /// `logit(s, a) = φ(s)ᵀθ_a`; `θ[a·dim + k]`.
    Linear { features: FeatureMap, n_actions: usize },
}

/// Actor parameters `θ` of a softmax policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    theta: Vec<f64>,
    parameterization: Parameterization,
}

fn check_finite(theta: &[f64]) -> Result<()> {
    match theta.iter().position(|x| !x.is_finite()) {
        Some(k) => Err(MoacError::Parameter(format!("theta[{k}] = {} is not finite", theta[k]))),
        None => Ok(()),
    }
}

impl PolicyParams {
    pub fn new(parameterization: Parameterization, theta: Vec<f64>) -> Result<Self> {
        let dim = match &parameterization {
            Parameterization::Tabular { n_states, n_actions } => n_states * n_actions,
            Parameterization::Linear { features, n_actions } => features.dim() * n_actions,
        };
        if dim == 0 {
            return Err(MoacError::Parameter("policy has no parameters".into()));
        }
        if theta.len() != dim {
            return Err(MoacError::Parameter(format!(
                "theta has length {}, expected {dim}",
                theta.len()
            )));
        }
        check_finite(&theta)?;
        Ok(Self { theta, parameterization })
    }

    /// Uniform tabular softmax (`θ = 0`).
    pub fn tabular_uniform(n_states: usize, n_actions: usize) -> Self {
        Self::new(
            Parameterization::Tabular { n_states, n_actions },
            vec![0.0; n_states * n_actions],
        )
        .expect("non-empty tabular policy")
    }

    pub fn tabular(n_states: usize, n_actions: usize, theta: Vec<f64>) -> Result<Self> {
        Self::new(Parameterization::Tabular { n_states, n_actions }, theta)
    }

    pub fn linear(features: FeatureMap, n_actions: usize, theta: Vec<f64>) -> Result<Self> {
        Self::new(Parameterization::Linear { features, n_actions }, theta)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn parameterization(&self) -> &Parameterization {
        &self.parameterization
    }

    pub fn n_states(&self) -> usize {
        match &self.parameterization {
            Parameterization::Tabular { n_states, .. } => *n_states,
            Parameterization::Linear { features, .. } => features.n_states(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match &self.parameterization {
            Parameterization::Tabular { n_actions, .. } | Parameterization::Linear { n_actions, .. } => {
                *n_actions
            }
        }
    }

    /// Same parameterization, different `θ`.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(self.parameterization.clone(), theta)
    }

    /// `θ ← θ + step · direction`; rejects a non-finite result.
    pub fn ascend(&mut self, direction: &[f64], step: f64) -> Result<()> {
        if direction.len() != self.theta.len() {
            return Err(MoacError::Parameter("direction has wrong dimension".into()));
        }
        let next: Vec<f64> = self
            .theta
            .iter()
            .zip(direction)
            .map(|(t, g)| t + step * g)
            .collect();
        check_finite(&next)?;
        self.theta = next;
        Ok(())
    }

    pub fn logits(&self, state: usize) -> Vec<f64> {
        match &self.parameterization {
            Parameterization::Tabular { n_states, n_actions } => {
                assert!(state < *n_states, "state {state} out of range");
                self.theta[state * n_actions..(state + 1) * n_actions].to_vec()
            }
            Parameterization::Linear { features, n_actions } => {
                let dim = features.dim();
                (0..*n_actions)
                    .map(|a| features.dot(state, &self.theta[a * dim..(a + 1) * dim]))
                    .collect()
            }
        }
    }

    /// `π_θ(·|s)`, computed with max-subtraction.
    pub fn action_probabilities(&self, state: usize) -> Vec<f64> {
        let mut p = self.logits(state);
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in p.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        p.iter_mut().for_each(|x| *x /= sum);
        p
    }

    /// `out += scale · ψ_θ(s, a)` without materialising `ψ`.
    pub fn accumulate_score(&self, state: usize, action: usize, scale: f64, out: &mut [f64]) {
        let pi = self.action_probabilities(state);
        match &self.parameterization {
            Parameterization::Tabular { n_actions, .. } => {
                let base = state * n_actions;
                for (b, &pb) in pi.iter().enumerate() {
                    let indicator = if b == action { 1.0 } else { 0.0 };
                    out[base + b] += scale * (indicator - pb);
                }
            }
            Parameterization::Linear { features, .. } => {
                let dim = features.dim();
                for (b, &pb) in pi.iter().enumerate() {
                    let indicator = if b == action { 1.0 } else { 0.0 };
                    let coeff = scale * (indicator - pb);
                    features.add_scaled(state, coeff, &mut out[b * dim..(b + 1) * dim]);
                }
            }
        }
    }

    /// Score function `ψ_θ(s, a) = ∇_θ log π_θ(a|s)`.
    pub fn score_function(&self, state: usize, action: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.accumulate_score(state, action, 1.0, &mut out);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| MoacError::Data(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PolicyParams =
            serde_json::from_str(text).map_err(|e| MoacError::Parameter(e.to_string()))?;
        // route through the constructor so dimensions and finiteness are rechecked
        Self::new(raw.parameterization, raw.theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits_are_uniform() {
        let p = PolicyParams::tabular_uniform(3, 4);
        for s in 0..3 {
            for x in p.action_probabilities(s) {
                assert!((x - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn log_two_logits() {
        let p = PolicyParams::tabular(1, 2, vec![2f64.ln(), 0.0]).unwrap();
        let pi = p.action_probabilities(0);
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let p = PolicyParams::tabular(1, 2, vec![1000.0, 999.0]).unwrap();
        let pi = p.action_probabilities(0);
        assert!(pi.iter().all(|x| x.is_finite()));
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_two_action_score() {
        let p = PolicyParams::tabular_uniform(2, 2);
        assert_eq!(p.score_function(1, 0), vec![0.0, 0.0, 0.5, -0.5]);
    }

    #[test]
    fn non_finite_theta_is_rejected() {
        assert!(matches!(
            PolicyParams::tabular(1, 2, vec![f64::NAN, 0.0]),
            Err(MoacError::Parameter(_))
        ));
        let mut p = PolicyParams::tabular_uniform(1, 2);
        assert!(p.ascend(&[f64::INFINITY, 0.0], 1.0).is_err());
        assert_eq!(p.theta(), &[0.0, 0.0]);
    }

    #[test]
    fn linear_policy_matches_tabular_on_one_hot() {
        let f = FeatureMap::one_hot(2).unwrap();
        let theta_lin = vec![0.3, -0.2, 1.1, 0.4]; // [a0: s0,s1][a1: s0,s1]
        let lin = PolicyParams::linear(f, 2, theta_lin).unwrap();
        let tab = PolicyParams::tabular(2, 2, vec![0.3, 1.1, -0.2, 0.4]).unwrap();
        for s in 0..2 {
            let (a, b) = (lin.action_probabilities(s), tab.action_probabilities(s));
            assert!((a[0] - b[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn json_round_trip() {
        let p = PolicyParams::tabular(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(PolicyParams::from_json(&p.to_json().unwrap()).unwrap(), p);
    }
}
