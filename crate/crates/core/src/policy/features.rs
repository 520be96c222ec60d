use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MoacError, Result};

const NORM_SLACK: f64 = 1e-12;
const RANK_TOL: f64 = 1e-8;

/// State features `φ(s)`, one row per state.
///
/// Rows are also kept in sparse form because the default maps are one-hot and
/// the TD inner loops only touch the nonzero entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFeatures", into = "RawFeatures")]
pub struct FeatureMap {
    n_states: usize,
    dim: usize,
    /// Row-major `n_states × dim`.
    data: Vec<f64>,
    sparse: Vec<Vec<(usize, f64)>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeatures {
    rows: Vec<Vec<f64>>,
}

impl TryFrom<RawFeatures> for FeatureMap {
    type Error = MoacError;
    fn try_from(raw: RawFeatures) -> Result<Self> {
        let n = raw.rows.len();
        let dim = raw.rows.first().map_or(0, Vec::len);
        if raw.rows.iter().any(|r| r.len() != dim) {
            return Err(MoacError::Parameter("feature rows differ in length".into()));
        }
        FeatureMap::new(n, dim, raw.rows.concat())
    }
}

impl From<FeatureMap> for RawFeatures {
    fn from(f: FeatureMap) -> Self {
        RawFeatures {
            rows: f.data.chunks(f.dim).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl FeatureMap {
    /// Validates unit-bounded rows and full column rank.
    pub fn new(n_states: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if n_states == 0 || dim == 0 || data.len() != n_states * dim {
            return Err(MoacError::Parameter(format!(
                "feature matrix must be {n_states}x{dim} and non-empty"
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(MoacError::Parameter("feature matrix has non-finite entries".into()));
        }
        for (s, row) in data.chunks(dim).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1.0 + NORM_SLACK {
                return Err(MoacError::AssumptionViolation(format!(
                    "feature row {s} has norm {norm} > 1"
                )));
            }
        }
        if dim > n_states {
            return Err(MoacError::AssumptionViolation(
                "feature dimension exceeds number of states; cannot have full column rank".into(),
            ));
        }
        let phi = DMatrix::from_row_slice(n_states, dim, &data);
        let smallest = phi.singular_values().min();
        if smallest < RANK_TOL {
            return Err(MoacError::AssumptionViolation(format!(
                "feature matrix is rank deficient (smallest singular value {smallest:e})"
            )));
        }
        let sparse = data
            .chunks(dim)
            .map(|row| row.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect())
            .collect();
        Ok(Self { n_states, dim, data, sparse })
    }

    /// One-hot over states with the last row zeroed: `dim = n_states - 1`.
    ///
    /// Satisfies the norm, rank and no-constant conditions together.
    pub fn default_for(n_states: usize) -> Result<Self> {
        if n_states < 2 {
            return Err(MoacError::Parameter("default features need at least two states".into()));
        }
        let dim = n_states - 1;
        let mut data = vec![0.0; n_states * dim];
        for s in 0..dim {
            data[s * dim + s] = 1.0;
        }
        Self::new(n_states, dim, data)
    }

    /// Identity features over all states. Represents every value function,
    /// but can fit the constant vector, so the average-reward TD matrix is singular.
    pub fn one_hot(n_states: usize) -> Result<Self> {
        let mut data = vec![0.0; n_states * n_states];
        for s in 0..n_states {
            data[s * n_states + s] = 1.0;
        }
        Self::new(n_states, n_states, data)
    }

    /// Checks that no weight vector reproduces the all-ones vector, which the
    /// average-reward critic requires.
    pub fn check_excludes_constant(&self) -> Result<()> {
        let phi = self.matrix();
        let ones = DVector::from_element(self.n_states, 1.0);
        let svd = phi.clone().svd(true, true);
        let u = svd
            .solve(&ones, 1e-14)
            .map_err(|e| MoacError::Parameter(e.to_string()))?;
        let residual = (&phi * u - ones).norm();
        if residual < RANK_TOL {
            return Err(MoacError::AssumptionViolation(format!(
                "features reproduce the constant vector (residual {residual:e})"
            )));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.data[state * self.dim..(state + 1) * self.dim]
    }

    pub fn sparse_row(&self, state: usize) -> &[(usize, f64)] {
        &self.sparse[state]
    }

    /// `φ(s)ᵀw`.
    pub fn dot(&self, state: usize, w: &[f64]) -> f64 {
        self.sparse[state].iter().map(|&(k, v)| v * w[k]).sum()
    }

    /// `out += scale · φ(s)`.
    pub fn add_scaled(&self, state: usize, scale: f64, out: &mut [f64]) {
        for &(k, v) in &self.sparse[state] {
            out[k] += scale * v;
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_states, self.dim, &self.data)
    }
}
