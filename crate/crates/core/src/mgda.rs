//! Min-norm element of the convex hull of objective gradients, and the
//! momentum update of the simplex weights.
//!
//! Two objectives use the closed-form projection of the unconstrained
//! minimiser onto `[0, 1]`. Three or more run Frank-Wolfe with away steps on
//! the Gram matrix; whenever the active face admits a feasible exact
//! minimiser it is taken directly, which makes the solver terminate exactly
//! on the small problems seen here. Every solution carries the Frank-Wolfe
//! duality gap as an optimality certificate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MoacError, Result};

pub const SIMPLEX_TOL: f64 = 1e-10;
pub const CERTIFICATE_TOL: f64 = 1e-10;
pub const MAX_FW_ITERATIONS: usize = 100_000;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights(Vec<f64>);

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = MoacError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Self {
        w.0
    }
}

impl SimplexWeights {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(MoacError::Parameter("simplex weights need at least one entry".into()));
        }
        if lambda.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(MoacError::Parameter(format!("simplex weights {lambda:?} have a negative entry")));
        }
        let sum: f64 = lambda.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(MoacError::Parameter(format!("simplex weights sum to {sum}")));
        }
        Ok(Self(lambda))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn vertex(m: usize, k: usize) -> Self {
        let mut v = vec![0.0; m];
        v[k] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `|self - other|_1`.
    pub fn l1_distance(&self, other: &SimplexWeights) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    /// `Σ_i λ_i g_i`.
    pub fn combine(&self, vectors: &[Vec<f64>]) -> Vec<f64> {
        let dim = vectors.first().map_or(0, Vec::len);
        let mut out = vec![0.0; dim];
        for (l, g) in self.0.iter().zip(vectors) {
            for (o, x) in out.iter_mut().zip(g) {
                *o += l * x;
            }
        }
        out
    }
}

/// Result of the min-norm problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MinNormSolution {
    pub weights: SimplexWeights,
    /// `‖Σ_i λ_i g_i‖²`.
    pub min_norm_sq: f64,
    /// Frank-Wolfe duality gap `max_i (⟨ḡ,ḡ⟩ - ⟨ḡ,g_i⟩)`.
    pub gap: f64,
    pub iterations: usize,
}

impl MinNormSolution {
    /// Whether the duality gap meets `CERTIFICATE_TOL · (1 + ‖ḡ‖²)`.
    pub fn is_certified(&self) -> bool {
        self.gap <= CERTIFICATE_TOL * (1.0 + self.min_norm_sq)
    }
}

fn gram(gradients: &[Vec<f64>]) -> DMatrix<f64> {
    let m = gradients.len();
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v: f64 = gradients[i].iter().zip(&gradients[j]).map(|(a, b)| a * b).sum();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    // symmetrise explicitly; identical here, kept for externally supplied Gram matrices
    (&g + g.transpose()) * 0.5
}

fn argmin_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (k, v) in values.enumerate() {
        if v < best_v {
            best = k;
            best_v = v;
        }
    }
    best
}

struct Evaluated {
    g_lambda: DVector<f64>,
    value: f64,
    gap: f64,
}

fn evaluate(gram: &DMatrix<f64>, lambda: &DVector<f64>) -> Evaluated {
    let g_lambda = gram * lambda;
    let value = lambda.dot(&g_lambda).max(0.0);
    let min = g_lambda.iter().copied().fold(f64::INFINITY, f64::min);
    Evaluated { gap: (value - min).max(0.0), g_lambda, value }
}

/// Exact minimiser over the affine hull of the support, if it stays feasible.
fn face_minimiser(gram: &DMatrix<f64>, support: &[usize]) -> Option<DVector<f64>> {
    let k = support.len();
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            kkt[(a, b)] = gram[(i, j)];
        }
        kkt[(a, k)] = 1.0;
        kkt[(k, a)] = 1.0;
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().take(k).any(|x| !x.is_finite() || *x < 0.0) {
        return None;
    }
    let mut lambda = DVector::zeros(gram.nrows());
    for (a, &i) in support.iter().enumerate() {
        lambda[i] = sol[a];
    }
    let sum = lambda.sum();
    Some(lambda / sum)
}

fn solve_two(gram: &DMatrix<f64>) -> DVector<f64> {
    let (g11, g22, g12) = (gram[(0, 0)], gram[(1, 1)], gram[(0, 1)]);
    let denom = g11 + g22 - 2.0 * g12;
    let l1 = if denom <= f64::EPSILON * (g11 + g22).max(f64::MIN_POSITIVE) {
        // identical gradients: every λ is optimal, keep the first
        1.0
    } else {
        ((g22 - g12) / denom).clamp(0.0, 1.0)
    };
    DVector::from_vec(vec![l1, 1.0 - l1])
}

fn frank_wolfe(gram: &DMatrix<f64>) -> Result<(DVector<f64>, usize)> {
    let m = gram.nrows();
    let start = argmin_first((0..m).map(|i| gram[(i, i)]));
    let mut lambda = DVector::zeros(m);
    lambda[start] = 1.0;
    for it in 0..MAX_FW_ITERATIONS {
        let ev = evaluate(gram, &lambda);
        if ev.gap <= CERTIFICATE_TOL * (1.0 + ev.value) {
            return Ok((lambda, it));
        }
        let support: Vec<usize> = (0..m).filter(|&i| lambda[i] > 0.0).collect();
        if support.len() > 1 {
            if let Some(cand) = face_minimiser(gram, &support) {
                let cev = evaluate(gram, &cand);
                if cev.value <= ev.value {
                    lambda = cand;
                    if cev.gap <= CERTIFICATE_TOL * (1.0 + cev.value) {
                        return Ok((lambda, it + 1));
                    }
                }
            }
        }
        let ev = evaluate(gram, &lambda);
        let fw = argmin_first(ev.g_lambda.iter().copied());
        let away = support
            .iter()
            .copied()
            .filter(|&j| lambda[j] > 0.0)
            .fold(None::<usize>, |best, j| match best {
                Some(b) if ev.g_lambda[b] >= ev.g_lambda[j] => Some(b),
                _ => Some(j),
            })
            .unwrap_or(fw);
        let fw_gain = ev.value - ev.g_lambda[fw];
        let away_gain = ev.g_lambda[away] - ev.value;
        let (direction, max_step) = if fw_gain >= away_gain || lambda[away] >= 1.0 {
            let mut d = -lambda.clone();
            d[fw] += 1.0;
            (d, 1.0)
        } else {
            let mut d = lambda.clone();
            d[away] -= 1.0;
            (d, lambda[away] / (1.0 - lambda[away]))
        };
        let curvature = direction.dot(&(gram * &direction));
        let slope = ev.g_lambda.dot(&direction);
        if curvature <= 0.0 || slope >= 0.0 {
            break;
        }
        let step = (-slope / curvature).min(max_step);
        lambda += direction * step;
        if step == max_step && fw_gain < away_gain {
            lambda[away] = 0.0;
        }
        lambda.iter_mut().for_each(|x| *x = x.max(0.0));
        let sum = lambda.sum();
        lambda /= sum;
    }
    let ev = evaluate(gram, &lambda);
    if ev.gap <= CERTIFICATE_TOL * (1.0 + ev.value) {
        return Ok((lambda, MAX_FW_ITERATIONS));
    }
    Err(MoacError::Convergence { iterations: MAX_FW_ITERATIONS, gap: ev.gap })
}

/// Minimises `‖Σ_i λ_i g_i‖²` over the probability simplex.
pub fn solve_min_norm(gradients: &[Vec<f64>]) -> Result<MinNormSolution> {
    let m = gradients.len();
    if m == 0 {
        return Err(MoacError::Parameter("need at least one gradient".into()));
    }
    let dim = gradients[0].len();
    if gradients.iter().any(|g| g.len() != dim) {
        return Err(MoacError::Parameter("gradients differ in dimension".into()));
    }
    if gradients.iter().flatten().any(|x| !x.is_finite()) {
        return Err(MoacError::Parameter("gradient has non-finite entries".into()));
    }
    let gram = gram(gradients);
    let (lambda, iterations) = match m {
        1 => (DVector::from_element(1, 1.0), 0),
        2 => (solve_two(&gram), 0),
        _ => frank_wolfe(&gram)?,
    };
    let ev = evaluate(&gram, &lambda);
    let weights = SimplexWeights::new(lambda.as_slice().to_vec())?;
    // norm from the combined vector, not the Gram form, to avoid cancellation
    let combined = weights.combine(gradients);
    let min_norm_sq = combined.iter().map(|x| x * x).sum();
    Ok(MinNormSolution { weights, min_norm_sq, gap: ev.gap, iterations })
}

/// Momentum coefficient schedule `η_t`, `t ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MomentumSchedule {
    /// `η_t = value`.
    Constant { value: f64 },
    /// `η_t = t^{-exponent}`, so `η_1 = 1`.
    Power { exponent: f64 },
    /// `η_t = 0`: the weights never leave their initial value.
    Zero,
}

impl MomentumSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MomentumSchedule::Constant { value } if !(0.0..=1.0).contains(&value) => {
                Err(MoacError::Parameter(format!("constant momentum {value} outside [0, 1]")))
            }
            MomentumSchedule::Power { exponent } if !(exponent >= 0.0 && exponent.is_finite()) => {
                Err(MoacError::Parameter(format!("momentum exponent {exponent} must be >= 0")))
            }
            _ => Ok(()),
        }
    }

    pub fn eta(&self, t: usize) -> f64 {
        assert!(t >= 1, "momentum schedule is indexed from t = 1");
        match *self {
            MomentumSchedule::Constant { value } => value,
            MomentumSchedule::Power { exponent } => (t as f64).powf(-exponent),
            MomentumSchedule::Zero => 0.0,
        }
    }

    /// Short name used in file names and summaries.
    pub fn label(&self) -> String {
        match *self {
            MomentumSchedule::Constant { value } => format!("constant-{value}"),
            MomentumSchedule::Power { exponent } => format!("power-{exponent}"),
            MomentumSchedule::Zero => "zero".to_string(),
        }
    }
}

/// `λ_t = (1-η)λ_{t-1} + η λ̂*_t`.
pub fn momentum_update(
    prev: &SimplexWeights,
    qp_solution: &SimplexWeights,
    eta: f64,
) -> Result<SimplexWeights> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(MoacError::Parameter(format!("momentum coefficient {eta} outside [0, 1]")));
    }
    if prev.len() != qp_solution.len() {
        return Err(MoacError::Parameter("simplex weights differ in length".into()));
    }
    let mixed = prev
        .as_slice()
        .iter()
        .zip(qp_solution.as_slice())
        .map(|(a, b)| {
            let x = (1.0 - eta) * a + eta * b;
            if (-1e-12..0.0).contains(&x) {
                0.0
            } else {
                x
            }
        })
        .collect();
    SimplexWeights::new(mixed)
}
