use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use moac_bench::config::ExperimentConfig;
use moac_bench::error::{BenchError, Result};
use moac_bench::runner::{run_experiment, RunOptions};
use moac_bench::summary::summarize;
use moac_core::opeval::{generate_logged_data, ncis_scores, LoggedDataset, DEFAULT_CAP};
use moac_core::policy::PolicyParams;

#[derive(Parser)]
#[command(name = "moac", version, about = "Multi-objective actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config and write CSVs plus summary.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record exact-oracle diagnostics regardless of the config.
        #[arg(long)]
        oracle: bool,
    },
    /// Recompute summary.json from the CSVs in a run directory.
    Summarize { dir: PathBuf },
    /// Print NCIS scores of a policy on a logged dataset as JSON.
    Ncis {
        dataset: PathBuf,
        policy: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: f64,
    },
    /// Write a synthetic JSONL log by running a behavior policy in the config's environment.
    GenerateLog {
        config: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Behavior policy JSON; uniform tabular when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_policy(path: &Path) -> Result<PolicyParams> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
    PolicyParams::from_json(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seeds, out, oracle } => {
            let cfg = ExperimentConfig::load(&config)?;
            let opts = RunOptions { out_dir: out, seeds, oracle, workers: None };
            let report = run_experiment(&cfg, &base_dir(&config), &opts)?;
            for (label, s) in &report.summaries {
                log::info!("{label}: {} seeds, median ratio {:.3e}", s.n_seeds, s.grad_norm_trend.median_ratio);
            }
            println!("{}", report.out_dir.display());
        }
        Command::Summarize { dir } => {
            let doc = summarize(&dir)?;
            log::debug!("{doc:?}");
            println!("{}", dir.join("summary.json").display());
        }
        Command::Ncis { dataset, policy, cap } => {
            let ds = LoggedDataset::load(&dataset)?;
            let candidate = read_policy(&policy)?;
            let scores = ncis_scores(&ds, &candidate, cap)?;
            println!("{}", serde_json::json!({ "cap": cap, "n": ds.len(), "scores": scores }));
        }
        Command::GenerateLog { config, steps, seed, out, policy } => {
            let cfg = ExperimentConfig::load(&config)?;
            let env = cfg.environment.build(&base_dir(&config))?;
            let behavior = match policy {
                Some(p) => read_policy(&p)?,
                None => PolicyParams::tabular_uniform(env.n_states(), env.n_actions()),
            };
            generate_logged_data(&env, &behavior, steps, seed)?.save(&out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
