//! Seeded multi-run execution and per-seed metric files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use moac_core::driver::{run_moac_observed, MetricsRecord, MoacConfig};
use moac_core::mgda::MomentumSchedule;
use moac_core::momdp::TabularMomdp;
use moac_core::policy::{FeatureMap, PolicyParams};
use moac_core::MoacError;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{BenchError, Result};
use crate::summary::{summarize, Summary, SummaryDoc};

/// Environment variable holding the worker-pool size.
pub const WORKERS_ENV: &str = "MOAC_WORKERS";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the config's `output`.
    pub out_dir: Option<PathBuf>,
    /// Overrides the config's `seeds`.
    pub seeds: Option<usize>,
    /// Forces oracle diagnostics on.
    pub oracle: bool,
    /// Worker count; falls back to `MOAC_WORKERS`, then to the number of CPUs.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    /// One summary per momentum schedule, in config order.
    pub summaries: Vec<(String, Summary)>,
}

pub fn worker_count(explicit: Option<usize>) -> Result<usize> {
    if let Some(n) = explicit {
        return Ok(n.max(1));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| BenchError::Config(format!("{WORKERS_ENV}={v} is not a positive integer"))),
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// CSV header for `m` objectives.
pub fn csv_header(m: usize, oracle: bool) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=m).map(|i| format!("reward_mean_{i}")));
    h.push("grad_norm_sq".into());
    h.extend((1..=m).map(|i| format!("lambda_{i}")));
    h.push("eta_t".into());
    if oracle {
        h.extend((1..=m).map(|i| format!("critic_err_{i}")));
        h.extend((1..=m).map(|i| format!("J_exact_{i}")));
        h.push("pareto_gap".into());
    }
    h
}

/// 17 significant digits, which round-trips every `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn optional(values: Option<&[f64]>, m: usize, out: &mut Vec<String>) {
    match values {
        Some(v) => out.extend(v.iter().map(|x| format_float(*x))),
        None => out.extend(std::iter::repeat_n(String::new(), m)),
    }
}

pub fn csv_row(rec: &MetricsRecord, oracle: bool) -> Vec<String> {
    let m = rec.lambda.len();
    let mut row = vec![rec.t.to_string()];
    row.extend(rec.reward_mean.iter().map(|x| format_float(*x)));
    row.push(format_float(rec.grad_norm_sq));
    row.extend(rec.lambda.iter().map(|x| format_float(*x)));
    row.push(format_float(rec.eta_t));
    if oracle {
        optional(rec.critic_err.as_deref(), m, &mut row);
        optional(rec.j_exact.as_deref(), m, &mut row);
        row.push(rec.pareto_gap.map(format_float).unwrap_or_default());
    }
    row
}

pub fn seed_stem(index: usize) -> String {
    format!("seed_{index:04}")
}

struct SeedJob<'a> {
    env: &'a TabularMomdp,
    config: MoacConfig,
    dir: PathBuf,
    index: usize,
    jsonl: bool,
}

fn run_seed(job: &SeedJob<'_>) -> Result<()> {
    let stem = seed_stem(job.index);
    let csv_path = job.dir.join(format!("{stem}.csv"));
    let done_path = job.dir.join(format!("{stem}.DONE"));
    if done_path.exists() {
        fs::remove_file(&done_path).map_err(|e| BenchError::io(&done_path, e))?;
    }
    let oracle = job.config.oracle;
    let m = job.env.n_objectives();
    let mut csv = csv::Writer::from_path(&csv_path).map_err(|e| BenchError::io(&csv_path, e))?;
    csv.write_record(csv_header(m, oracle)).map_err(|e| BenchError::io(&csv_path, e))?;
    let jsonl_path = job.dir.join(format!("{stem}.jsonl"));
    let mut jsonl = if job.jsonl {
        Some(BufWriter::new(File::create(&jsonl_path).map_err(|e| BenchError::io(&jsonl_path, e))?))
    } else {
        None
    };

    let features = FeatureMap::default_for(job.env.n_states())?;
    let policy = PolicyParams::tabular_uniform(job.env.n_states(), job.env.n_actions());
    let mut write_err: Option<BenchError> = None;
    let outcome = run_moac_observed(job.env, &features, policy, &job.config, |rec, _| {
        if write_err.is_some() {
            return;
        }
        if let Err(e) = csv.write_record(csv_row(rec, oracle)) {
            write_err = Some(BenchError::io(&csv_path, e));
            return;
        }
        if let Some(out) = jsonl.as_mut() {
            let line = serde_json::to_string(rec).expect("metrics records serialize");
            if let Err(e) = writeln!(out, "{line}") {
                write_err = Some(BenchError::io(&jsonl_path, e));
            }
        }
    });
    csv.flush().map_err(|e| BenchError::io(&csv_path, e))?;
    if let Some(out) = jsonl.as_mut() {
        out.flush().map_err(|e| BenchError::io(&jsonl_path, e))?;
    }
    if let Some(e) = write_err {
        return Err(e);
    }
    let run = outcome.map_err(|e| match e {
        MoacError::Divergence { iteration, reason } => BenchError::Divergence {
            seed: job.config.seed,
            iteration,
            reason,
        },
        other => BenchError::Core(other),
    })?;
    let policy_path = job.dir.join(format!("{stem}.policy.json"));
    fs::write(&policy_path, run.final_policy.to_json()?).map_err(|e| BenchError::io(&policy_path, e))?;
    fs::write(&done_path, format!("seed {}\n", job.config.seed)).map_err(|e| BenchError::io(&done_path, e))?;
    Ok(())
}

/// Runs every seed (and every schedule of a momentum sweep), then writes the summaries.
///
/// `base_dir` resolves relative paths in the config. On divergence the other
/// seeds still finish; the error reported is the one of the lowest seed.
pub fn run_experiment(config: &ExperimentConfig, base_dir: &Path, opts: &RunOptions) -> Result<RunReport> {
    config.validate()?;
    let seeds = opts.seeds.unwrap_or(config.seeds);
    if seeds == 0 {
        return Err(BenchError::Config("--seeds must be >= 1".into()));
    }
    let out_dir = match (&opts.out_dir, &config.output) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) if dir.is_relative() => base_dir.join(dir),
        (None, Some(dir)) => dir.clone(),
        (None, None) => base_dir.join("runs").join(&config.name),
    };
    let env = config.environment.build(base_dir)?;
    let schedules = config.schedules();
    let sweep = !config.momentum_sweep.is_empty();

    let mut dirs: Vec<(String, PathBuf, MomentumSchedule)> = Vec::new();
    for schedule in &schedules {
        let label = schedule.label();
        let dir = if sweep { out_dir.join(&label) } else { out_dir.clone() };
        if dirs.iter().any(|(l, _, _)| *l == label) {
            return Err(BenchError::Config(format!("momentum_sweep: duplicate schedule {label}")));
        }
        fs::create_dir_all(&dir).map_err(|e| BenchError::io(&dir, e))?;
        dirs.push((label, dir, *schedule));
    }

    let mut jobs = Vec::new();
    for (_, dir, schedule) in &dirs {
        for index in 0..seeds {
            let mut moac = config.moac.clone();
            moac.momentum = *schedule;
            moac.seed = config.moac.seed.wrapping_add(index as u64);
            moac.oracle |= opts.oracle;
            jobs.push(SeedJob { env: &env, config: moac, dir: dir.clone(), index, jsonl: config.jsonl });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(opts.workers)?)
        .build()
        .map_err(|e| BenchError::Io(e.to_string()))?;
    let results: Vec<Result<()>> = pool.install(|| jobs.par_iter().map(run_seed).collect());
    let mut first_err = None;
    for r in results {
        if let Err(e) = r {
            if first_err.is_none() {
                first_err = Some(e);
            }
        }
    }

    if let Some(e) = first_err {
        // keep whatever completed seeds there are summarised
        for (_, dir, _) in &dirs {
            let _ = summarize(dir);
        }
        return Err(e);
    }
    let mut summaries = Vec::new();
    for (label, dir, _) in &dirs {
        match summarize(dir)? {
            SummaryDoc::Single(s) => summaries.push((label.clone(), *s)),
            SummaryDoc::Sweep { .. } => unreachable!("schedule directories hold seed files"),
        }
    }
    if sweep {
        summarize(&out_dir)?;
    }
    Ok(RunReport { out_dir, summaries })
}
