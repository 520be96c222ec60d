//! Exact chain quantities computed by dense linear algebra.
//!
//! These are the oracles the stochastic learners are checked against, so
//! they favour exactness over speed: every solve is a dense LU on at most a
//! few hundred states.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::TabularMomdp;
use crate::error::{MoacError, Result};
use crate::policy::PolicyParams;
use crate::RewardSetting;

const STATIONARY_RESIDUAL: f64 = 1e-10;
const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 1_000_000;

/// State-to-state kernel `P_θ(s'|s) = Σ_a π_θ(a|s) P(s'|s,a)`.
pub fn induced_transition(env: &TabularMomdp, policy: &PolicyParams) -> DMatrix<f64> {
    let n = env.n_states();
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        let pi = policy.action_probabilities(s);
        for (a, &pa) in pi.iter().enumerate() {
            for (s2, &q) in env.transition_row(s, a).iter().enumerate() {
                p[(s, s2)] += pa * q;
            }
        }
    }
    p
}

/// Policy-averaged reward `r_θ(s) = Σ_a π_θ(a|s) r(s,a)` for one objective.
pub fn induced_rewards(env: &TabularMomdp, policy: &PolicyParams, objective: usize) -> DVector<f64> {
    DVector::from_fn(env.n_states(), |s, _| {
        policy
            .action_probabilities(s)
            .iter()
            .enumerate()
            .map(|(a, &pa)| pa * env.reward(objective, s, a))
            .sum()
    })
}

/// Communicating-class structure of a finite chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainStructure {
    /// Closed (recurrent) classes, each sorted ascending.
    pub closed_classes: Vec<Vec<usize>>,
    /// Period of each closed class, in the same order.
    pub periods: Vec<usize>,
    pub n_states: usize,
}

impl ChainStructure {
    pub fn is_irreducible(&self) -> bool {
        self.closed_classes.len() == 1 && self.closed_classes[0].len() == self.n_states
    }

    pub fn is_aperiodic(&self) -> bool {
        self.periods.iter().all(|&p| p == 1)
    }

    /// A unique stationary distribution exists iff there is one closed class.
    pub fn has_unique_stationary(&self) -> bool {
        self.closed_classes.len() == 1
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Finds closed classes and their periods from the support of `p`.
pub fn analyze_chain(p: &DMatrix<f64>) -> ChainStructure {
    let n = p.nrows();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * 4);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for s in 0..n {
        for s2 in 0..n {
            if p[(s, s2)] > 0.0 {
                graph.add_edge(nodes[s], nodes[s2], ());
            }
        }
    }
    let mut closed = Vec::new();
    for scc in tarjan_scc(&graph) {
        let mut members: Vec<usize> = scc.iter().map(|ix| ix.index()).collect();
        members.sort_unstable();
        let mut inside = vec![false; n];
        for &s in &members {
            inside[s] = true;
        }
        let leaks = members
            .iter()
            .any(|&s| (0..n).any(|s2| p[(s, s2)] > 0.0 && !inside[s2]));
        if !leaks {
            closed.push(members);
        }
    }
    closed.sort();
    let periods = closed
        .iter()
        .map(|class| {
            let mut level = vec![usize::MAX; n];
            let mut queue = std::collections::VecDeque::new();
            level[class[0]] = 0;
            queue.push_back(class[0]);
            let mut period = 0;
            while let Some(u) = queue.pop_front() {
                for v in 0..n {
                    if p[(u, v)] > 0.0 {
                        if level[v] == usize::MAX {
                            level[v] = level[u] + 1;
                            queue.push_back(v);
                        } else {
                            let diff = (level[u] + 1).abs_diff(level[v]);
                            period = gcd(period, diff);
                        }
                    }
                }
            }
            period.max(1)
        })
        .collect();
    ChainStructure {
        closed_classes: closed,
        periods,
        n_states: n,
    }
}

fn stationary_of(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    let structure = analyze_chain(p);
    if !structure.has_unique_stationary() {
        return Err(MoacError::Model(format!(
            "chain has {} closed classes; no unique stationary distribution",
            structure.closed_classes.len()
        )));
    }
    let residual = |d: &DVector<f64>| (p.transpose() * d - d).amax();

    let mut m = p.transpose() - DMatrix::identity(n, n);
    m.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    if let Some(mut d) = m.lu().solve(&rhs) {
        d.iter_mut().for_each(|x| {
            if *x < 0.0 && *x > -1e-12 {
                *x = 0.0;
            }
        });
        let sum = d.sum();
        d /= sum;
        if d.iter().all(|&x| x >= 0.0) && residual(&d) <= STATIONARY_RESIDUAL {
            return Ok(d);
        }
    }

    // lazy chain keeps the iteration convergent for periodic classes
    let lazy = (p + DMatrix::identity(n, n)) * 0.5;
    let lazy_t = lazy.transpose();
    let mut d = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..POWER_MAX_ITERS {
        let next = &lazy_t * &d;
        let change = (&next - &d).amax();
        d = next;
        if change < POWER_TOL {
            break;
        }
    }
    let sum = d.sum();
    d /= sum;
    let r = residual(&d);
    if r > STATIONARY_RESIDUAL {
        return Err(MoacError::Model(format!(
            "stationary solve did not reach residual {STATIONARY_RESIDUAL:e} (got {r:e})"
        )));
    }
    Ok(d)
}

/// Stationary distribution `d_θ` of the chain induced by `policy`.
pub fn compute_stationary_distribution(env: &TabularMomdp, policy: &PolicyParams) -> Result<Vec<f64>> {
    Ok(stationary_of(&induced_transition(env, policy))?.as_slice().to_vec())
}

/// Value functions for one objective under a fixed policy.
#[derive(Debug, Clone)]
pub struct ValueSolution {
    /// `V(s)`; differential and `d_θ`-centred in the average setting.
    pub v: Vec<f64>,
    /// `Q(s,a)`, flat `[s][a]`.
    pub q: Vec<f64>,
    /// Objective value `J`.
    pub j: f64,
    /// `d_θ`, the stationary distribution (both settings).
    pub stationary: Vec<f64>,
}

impl ValueSolution {
    pub fn advantage(&self, n_actions: usize, s: usize, a: usize) -> f64 {
        self.q[s * n_actions + a] - self.v[s]
    }
}

fn solve(m: DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    m.lu()
        .solve(rhs)
        .ok_or_else(|| MoacError::Model(format!("{what}: singular linear system")))
}

/// Solves for `V`, `Q` and `J` of `objective` by exact linear solves.
///
/// Average setting: the Poisson equation `(I - P_θ)V = r_θ - J·1` normalised
/// by `Σ_s d_θ(s) V(s) = 0`. Discounted: `(I - γP_θ)V = r_θ`, with
/// `J = Σ_s ρ(s) V(s)` for the initial distribution `ρ`.
pub fn state_values(
    env: &TabularMomdp,
    policy: &PolicyParams,
    setting: RewardSetting,
    objective: usize,
) -> Result<ValueSolution> {
    let p = induced_transition(env, policy);
    let d = stationary_of(&p)?;
    let r = induced_rewards(env, policy, objective);
    let n = env.n_states();
    let na = env.n_actions();
    let ident = DMatrix::<f64>::identity(n, n);
    let (v, j, offset, gamma) = match setting {
        RewardSetting::Average => {
            let j = d.dot(&r);
            let ones = DVector::from_element(n, 1.0);
            let m = &ident - &p + &ones * d.transpose();
            let v = solve(m, &(&r - &ones * j), "Poisson equation")?;
            (v, j, j, 1.0)
        }
        RewardSetting::Discounted => {
            let gamma = env.discounts()[objective];
            let v = solve(&ident - &p * gamma, &r, "Bellman equation")?;
            let j = DVector::from_column_slice(env.initial_distribution()).dot(&v);
            (v, j, 0.0, gamma)
        }
    };
    let mut q = vec![0.0; n * na];
    for s in 0..n {
        for a in 0..na {
            let next: f64 = env
                .transition_row(s, a)
                .iter()
                .zip(v.iter())
                .map(|(p, v)| p * v)
                .sum();
            q[s * na + a] = env.reward(objective, s, a) - offset + gamma * next;
        }
    }
    Ok(ValueSolution {
        v: v.as_slice().to_vec(),
        q,
        j,
        stationary: d.as_slice().to_vec(),
    })
}

/// `Q(s,a)` flattened `[s][a]`; see [`state_values`].
pub fn state_action_values(
    env: &TabularMomdp,
    policy: &PolicyParams,
    setting: RewardSetting,
    objective: usize,
) -> Result<Vec<f64>> {
    Ok(state_values(env, policy, setting, objective)?.q)
}

/// Unnormalised discounted occupancy `ν = ρᵀ(I - γP_θ)⁻¹`; sums to `1/(1-γ)`.
pub fn discounted_occupancy(env: &TabularMomdp, policy: &PolicyParams, gamma: f64) -> Result<Vec<f64>> {
    let n = env.n_states();
    let p = induced_transition(env, policy);
    let m = (DMatrix::identity(n, n) - p * gamma).transpose();
    let rho = DVector::from_column_slice(env.initial_distribution());
    Ok(solve(m, &rho, "occupancy")?.as_slice().to_vec())
}

/// Exact objective vector `J(θ)`.
pub fn compute_exact_objective(
    env: &TabularMomdp,
    policy: &PolicyParams,
    setting: RewardSetting,
) -> Result<Vec<f64>> {
    let p = induced_transition(env, policy);
    let n = env.n_states();
    match setting {
        RewardSetting::Average => {
            let d = stationary_of(&p)?;
            Ok((0..env.n_objectives())
                .map(|i| d.dot(&induced_rewards(env, policy, i)))
                .collect())
        }
        RewardSetting::Discounted => {
            let rho = DVector::from_column_slice(env.initial_distribution());
            (0..env.n_objectives())
                .map(|i| {
                    let gamma = env.discounts()[i];
                    let m = DMatrix::identity(n, n) - &p * gamma;
                    let v = solve(m, &induced_rewards(env, policy, i), "Bellman equation")?;
                    Ok(rho.dot(&v))
                })
                .collect()
        }
    }
}
