use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TabularMomdp, Transition};
use crate::policy::PolicyParams;

/// Draws an index from a probability vector using one uniform variate.
pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = k;
            if u < acc {
                return k;
            }
        }
    }
    // u landed in the rounding slack above the cumulative sum
    last_positive
}

/// A single unbroken Markov chain over an environment.
///
/// Every call to [`MarkovSampler::sample_step`] continues from the state the
/// previous call ended in, so the critic and actor batches that share a sampler
/// read consecutive pieces of one trajectory.
#[derive(Debug, Clone)]
pub struct MarkovSampler<'a> {
    env: &'a TabularMomdp,
    current_state: usize,
    seed: u64,
    rng: ChaCha8Rng,
    trace: Option<Vec<Transition>>,
}

impl<'a> MarkovSampler<'a> {
    /// Starts the chain at a state drawn from the environment's initial distribution.
    pub fn new(env: &'a TabularMomdp, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let current_state = sample_index(env.initial_distribution(), rng.random::<f64>());
        Self {
            env,
            current_state,
            seed,
            rng,
            trace: None,
        }
    }

    /// Starts the chain at a fixed state.
    pub fn with_state(env: &'a TabularMomdp, state: usize, seed: u64) -> Self {
        assert!(state < env.n_states(), "state {state} out of range");
        Self {
            env,
            current_state: state,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: None,
        }
    }

    /// Records every transition taken from now on.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<Transition> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn env(&self) -> &'a TabularMomdp {
        self.env
    }

    pub fn current_state(&self) -> usize {
        self.current_state
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Takes `action` from the current state and advances the chain.
    pub fn sample_step(&mut self, action: usize) -> Transition {
        assert!(action < self.env.n_actions(), "action {action} out of range");
        let state = self.current_state;
        let row = self.env.transition_row(state, action);
        let next_state = sample_index(row, self.rng.random::<f64>());
        let tr = Transition {
            state,
            action,
            rewards: self.env.reward_vector(state, action),
            next_state,
        };
        self.current_state = next_state;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(tr.clone());
        }
        tr
    }

    /// Draws `a ~ π(·|s)` at the current state, then steps.
    pub fn step_with_policy(&mut self, policy: &PolicyParams) -> Transition {
        let probs = policy.action_probabilities(self.current_state);
        let action = sample_index(&probs, self.rng.random::<f64>());
        self.sample_step(action)
    }
}
