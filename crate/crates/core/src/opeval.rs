//! Capped, normalised importance-sampling scores over logged multi-reward data.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MoacError, Result};
use crate::momdp::{MarkovSampler, TabularMomdp};
use crate::policy::PolicyParams;

pub const DEFAULT_CAP: f64 = 10.0;

/// One logged step: state, action, reward vector and the behavior probability of the action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggedRecord {
    pub s: usize,
    pub a: usize,
    pub r: Vec<f64>,
    pub pb: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    records: Vec<LoggedRecord>,
}

impl LoggedDataset {
    pub fn new(records: Vec<LoggedRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(MoacError::Data("logged dataset is empty".into()));
        }
        let m = records[0].r.len();
        for (k, rec) in records.iter().enumerate() {
            if !(rec.pb > 0.0 && rec.pb <= 1.0) {
                return Err(MoacError::Data(format!(
                    "record {k}: behavior probability {} is not in (0, 1]",
                    rec.pb
                )));
            }
            if rec.r.len() != m {
                return Err(MoacError::Data(format!(
                    "record {k}: reward has {} entries, expected {m}",
                    rec.r.len()
                )));
            }
            if rec.r.iter().any(|x| !x.is_finite()) {
                return Err(MoacError::Data(format!("record {k}: non-finite reward")));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[LoggedRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_objectives(&self) -> usize {
        self.records[0].r.len()
    }

    /// Plain per-objective reward mean.
    pub fn reward_mean(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.n_objectives()];
        for rec in &self.records {
            for (acc, r) in sum.iter_mut().zip(&rec.r) {
                *acc += r;
            }
        }
        let n = self.records.len() as f64;
        sum.iter().map(|s| s / n).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| MoacError::Data(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (line_no, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| MoacError::Data(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LoggedRecord = serde_json::from_str(&line)
                .map_err(|e| MoacError::Data(format!("line {}: {e}", line_no + 1)))?;
            records.push(rec);
        }
        Self::new(records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| MoacError::Data(format!("{}: {e}", path.display()));
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        for rec in &self.records {
            let line = serde_json::to_string(rec).map_err(|e| MoacError::Data(e.to_string()))?;
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// `Σ w r^i / Σ w` with `w = min{C, π(a|s) / π_β(a|s)}`.
pub fn ncis_score(dataset: &LoggedDataset, candidate: &PolicyParams, cap: f64, objective: usize) -> Result<f64> {
    if objective >= dataset.n_objectives() {
        return Err(MoacError::Parameter(format!("objective {objective} out of range")));
    }
    Ok(ncis_scores(dataset, candidate, cap)?[objective])
}

/// [`ncis_score`] for every objective at once.
pub fn ncis_scores(dataset: &LoggedDataset, candidate: &PolicyParams, cap: f64) -> Result<Vec<f64>> {
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(MoacError::Parameter(format!("cap {cap} must be positive")));
    }
    let m = dataset.n_objectives();
    let mut num = vec![0.0; m];
    let mut den = 0.0;
    for (k, rec) in dataset.records().iter().enumerate() {
        if rec.s >= candidate.n_states() || rec.a >= candidate.n_actions() {
            return Err(MoacError::Data(format!("record {k}: state/action outside the candidate's domain")));
        }
        if rec.pb <= 0.0 {
            return Err(MoacError::Data(format!("record {k}: zero behavior probability")));
        }
        let w = (candidate.action_probabilities(rec.s)[rec.a] / rec.pb).min(cap);
        den += w;
        for (acc, r) in num.iter_mut().zip(&rec.r) {
            *acc += w * r;
        }
    }
    if den <= 0.0 {
        return Err(MoacError::Data("degenerate dataset: all importance weights are zero".into()));
    }
    Ok(num.iter().map(|x| x / den).collect())
}

/// Rolls the chain `n` steps under `behavior`, storing the exact `π_β(a|s)` of each logged action.
pub fn generate_logged_data(
    env: &TabularMomdp,
    behavior: &PolicyParams,
    n: usize,
    seed: u64,
) -> Result<LoggedDataset> {
    if n == 0 {
        return Err(MoacError::Parameter("need at least one logged step".into()));
    }
    let mut sampler = MarkovSampler::new(env, seed);
    let records = (0..n)
        .map(|_| {
            let tr = sampler.step_with_policy(behavior);
            let pb = behavior.action_probabilities(tr.state)[tr.action];
            LoggedRecord { s: tr.state, a: tr.action, r: tr.rewards, pb }
        })
        .collect();
    LoggedDataset::new(records)
}
