//! Cross-seed statistics recomputed from the per-seed CSV files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// Width of the centred moving average applied to `grad_norm_sq`.
pub const SMOOTHING_WINDOW: usize = 5;

/// One seed's metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTable {
    pub name: String,
    pub header: Vec<String>,
    pub t: Vec<usize>,
    /// `rows[k][c]` for data row `k` and column `c` (excluding `t`); blank cells are `None`.
    pub rows: Vec<Vec<Option<f64>>>,
}

impl RunTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| BenchError::io(path, e))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| BenchError::Schema(format!("{}: {e}", path.display())))?
            .iter()
            .map(String::from)
            .collect();
        if header.first().map(String::as_str) != Some("t") {
            return Err(BenchError::Schema(format!("{}: first column must be `t`", path.display())));
        }
        let mut t = Vec::new();
        let mut rows = Vec::new();
        for (k, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| BenchError::Schema(format!("{}: {e}", path.display())))?;
            let bad = |what: &str| BenchError::Schema(format!("{} row {}: {what}", path.display(), k + 1));
            let tk: usize = rec[0].parse().map_err(|_| bad("unparsable t"))?;
            if t.last().is_some_and(|&prev| tk <= prev) {
                return Err(bad("t is not increasing"));
            }
            t.push(tk);
            let row = rec
                .iter()
                .skip(1)
                .map(|cell| if cell.is_empty() { Ok(None) } else { cell.parse().map(Some) })
                .collect::<std::result::Result<Vec<Option<f64>>, _>>()
                .map_err(|_| bad("unparsable number"))?;
            rows.push(row);
        }
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        Ok(Self { name, header, t, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().skip(1).position(|h| h == name)
    }

    /// `(t, value)` pairs of a column, skipping blanks.
    pub fn series(&self, name: &str) -> Vec<(usize, f64)> {
        match self.column(name) {
            Some(c) => self.t.iter().zip(&self.rows).filter_map(|(&t, r)| r[c].map(|v| (t, v))).collect(),
            None => Vec::new(),
        }
    }
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Centred moving average; the window shrinks at both ends.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// First `t` at which smoothed `‖g_t‖²` falls to half its initial smoothed value.
pub fn half_initial_crossing(t: &[usize], grad_norm_sq: &[f64]) -> Option<usize> {
    let s = smooth(grad_norm_sq, SMOOTHING_WINDOW);
    let target = 0.5 * *s.first()?;
    s.iter().position(|&v| v <= target).map(|k| t[k])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub t: Vec<usize>,
    pub n: Vec<usize>,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub q1: Vec<f64>,
    pub q3: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradTrend {
    pub smoothing_window: usize,
    /// Per seed: mean smoothed `‖g_t‖²` over the first and last 10% of iterations, and their ratio.
    pub first_decile: Vec<f64>,
    pub last_decile: Vec<f64>,
    pub ratio: Vec<f64>,
    pub median_ratio: f64,
    /// Per seed: first `t` with smoothed `‖g_t‖²` at most half its initial value.
    pub half_initial_crossing: Vec<Option<usize>>,
    /// Median crossing, counting seeds that never cross as `T + 1`.
    pub median_half_initial_crossing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTrend {
    /// Per seed: mean of `pareto_gap` over the rows that carry it.
    pub pareto_gap_mean: Vec<f64>,
    pub median_pareto_gap_mean: f64,
    /// Per objective: median over seeds of `J(θ_last) - J(θ_first)` using the oracle rows.
    pub median_j_change: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_seeds: usize,
    pub seeds: Vec<String>,
    pub skipped: Vec<String>,
    pub columns: Vec<String>,
    pub per_t: BTreeMap<String, ColumnStats>,
    pub grad_norm_trend: GradTrend,
    pub oracle_trend: Option<OracleTrend>,
}

/// `summary.json` content: a single schedule or a momentum sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SummaryDoc {
    Single(Box<Summary>),
    Sweep {
        schedules: BTreeMap<String, Summary>,
        median_half_initial_crossing: BTreeMap<String, f64>,
    },
}

fn seed_files(dir: &Path) -> Result<(Vec<PathBuf>, Vec<String>)> {
    let mut complete = Vec::new();
    let mut skipped = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| BenchError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| BenchError::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        if path.with_extension("DONE").exists() {
            complete.push(path);
        } else {
            log::warn!("skipping incomplete run {}", path.display());
            skipped.push(path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string());
        }
    }
    complete.sort();
    skipped.sort();
    Ok((complete, skipped))
}

fn decile_mean(values: &[f64], last: bool) -> f64 {
    let k = values.len().div_ceil(10).max(1);
    let slice = if last { &values[values.len() - k..] } else { &values[..k] };
    slice.iter().sum::<f64>() / k as f64
}

/// Statistics over the given runs; they must share one header.
pub fn summarize_tables(tables: &[RunTable], skipped: Vec<String>) -> Result<Summary> {
    let first = tables.first().ok_or_else(|| BenchError::Schema("no complete run CSVs".into()))?;
    for tb in tables {
        if tb.header != first.header {
            return Err(BenchError::Schema(format!("{} has a different header than {}", tb.name, first.name)));
        }
    }
    let columns: Vec<String> = first.header[1..].to_vec();

    let mut per_t = BTreeMap::new();
    for name in &columns {
        let mut by_t: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for tb in tables {
            for (t, v) in tb.series(name) {
                by_t.entry(t).or_default().push(v);
            }
        }
        let mut st = ColumnStats { t: vec![], n: vec![], mean: vec![], median: vec![], q1: vec![], q3: vec![] };
        for (t, mut vals) in by_t {
            vals.sort_by(f64::total_cmp);
            st.t.push(t);
            st.n.push(vals.len());
            st.mean.push(vals.iter().sum::<f64>() / vals.len() as f64);
            st.median.push(quantile(&vals, 0.5));
            st.q1.push(quantile(&vals, 0.25));
            st.q3.push(quantile(&vals, 0.75));
        }
        per_t.insert(name.clone(), st);
    }

    let mut first_decile = Vec::new();
    let mut last_decile = Vec::new();
    let mut ratio = Vec::new();
    let mut crossing = Vec::new();
    let mut crossing_or_never = Vec::new();
    for tb in tables {
        let series = tb.series("grad_norm_sq");
        if series.is_empty() {
            return Err(BenchError::Schema(format!("{}: no grad_norm_sq values", tb.name)));
        }
        let ts: Vec<usize> = series.iter().map(|p| p.0).collect();
        let vs: Vec<f64> = series.iter().map(|p| p.1).collect();
        let sm = smooth(&vs, SMOOTHING_WINDOW);
        let (a, b) = (decile_mean(&sm, false), decile_mean(&sm, true));
        first_decile.push(a);
        last_decile.push(b);
        ratio.push(if a > 0.0 { b / a } else { f64::NAN });
        let c = half_initial_crossing(&ts, &vs);
        crossing.push(c);
        crossing_or_never.push(c.unwrap_or(ts.last().unwrap() + 1) as f64);
    }
    let finite: Vec<f64> = ratio.iter().copied().filter(|r| r.is_finite()).collect();
    let grad_norm_trend = GradTrend {
        smoothing_window: SMOOTHING_WINDOW,
        first_decile,
        last_decile,
        ratio,
        median_ratio: if finite.is_empty() { f64::NAN } else { median(&finite) },
        half_initial_crossing: crossing,
        median_half_initial_crossing: median(&crossing_or_never),
    };

    let oracle_trend = if columns.iter().any(|c| c == "pareto_gap") {
        let m = columns.iter().filter(|c| c.starts_with("J_exact_")).count();
        let mut gap_means = Vec::new();
        let mut changes = vec![Vec::new(); m];
        for tb in tables {
            let gaps = tb.series("pareto_gap");
            if gaps.is_empty() {
                continue;
            }
            gap_means.push(gaps.iter().map(|p| p.1).sum::<f64>() / gaps.len() as f64);
            for (i, ch) in changes.iter_mut().enumerate() {
                let j = tb.series(&format!("J_exact_{}", i + 1));
                if let (Some(a), Some(b)) = (j.first(), j.last()) {
                    ch.push(b.1 - a.1);
                }
            }
        }
        if gap_means.is_empty() {
            None
        } else {
            Some(OracleTrend {
                median_pareto_gap_mean: median(&gap_means),
                pareto_gap_mean: gap_means,
                median_j_change: changes.iter().map(|c| if c.is_empty() { f64::NAN } else { median(c) }).collect(),
            })
        }
    } else {
        None
    };

    Ok(Summary {
        n_seeds: tables.len(),
        seeds: tables.iter().map(|t| t.name.clone()).collect(),
        skipped,
        columns,
        per_t,
        grad_norm_trend,
        oracle_trend,
    })
}

fn summarize_single(dir: &Path) -> Result<Option<Summary>> {
    let (files, skipped) = seed_files(dir)?;
    if files.is_empty() && skipped.is_empty() {
        return Ok(None);
    }
    let tables = files.iter().map(|p| RunTable::read(p)).collect::<Result<Vec<_>>>()?;
    summarize_tables(&tables, skipped).map(Some)
}

/// Recomputes `summary.json` for a run directory and writes it back.
///
/// A directory holding seed CSVs yields a single summary. A directory whose
/// sub-directories hold seed CSVs (a momentum sweep) yields one summary per
/// sub-directory, keyed by its name.
pub fn summarize(dir: &Path) -> Result<SummaryDoc> {
    let doc = match summarize_single(dir)? {
        Some(s) => SummaryDoc::Single(Box::new(s)),
        None => {
            let mut schedules = BTreeMap::new();
            let entries = fs::read_dir(dir).map_err(|e| BenchError::io(dir, e))?;
            let mut subdirs: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            subdirs.sort();
            for sub in subdirs {
                if let Some(s) = summarize_single(&sub)? {
                    write_json(&sub.join("summary.json"), &SummaryDoc::Single(Box::new(s.clone())))?;
                    let label = sub.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                    schedules.insert(label, s);
                }
            }
            if schedules.is_empty() {
                return Err(BenchError::Schema(format!("{}: no run CSVs found", dir.display())));
            }
            let median_half_initial_crossing = schedules
                .iter()
                .map(|(k, s)| (k.clone(), s.grad_norm_trend.median_half_initial_crossing))
                .collect();
            SummaryDoc::Sweep { schedules, median_half_initial_crossing }
        }
    };
    write_json(&dir.join("summary.json"), &doc)?;
    Ok(doc)
}

fn write_json(path: &Path, doc: &SummaryDoc) -> Result<()> {
    let text = serde_json::to_string_pretty(doc).map_err(|e| BenchError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| BenchError::io(path, e))
}
