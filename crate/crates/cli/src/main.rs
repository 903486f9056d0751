use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use wii_core::costing::{write_eval_log, Budget};
use wii_core::experiment::{run_sweep, write_sweep_csv, ExperimentConfig, Variant};
use wii_core::model::Constraints;
use wii_core::oracle::{generate, GeneratorParams, WorkloadFile};
use wii_core::par::ExecMode;
use wii_core::search::{tune, Algorithm, SearchOptions};
use wii_core::validate::run_validation;

#[derive(Parser)]
#[command(name = "wii", version, about = "Budget-aware index tuning with what-if call interception")]
struct Cli {
    /// Run sweeps and validation on a single thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic workload and cost model.
    Generate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune one workload and print the report as JSON.
    Tune {
        #[arg(long)]
        workload: PathBuf,
        #[arg(long, default_value = "two_phase_greedy")]
        algo: Algorithm,
        /// Number of charged what-if calls, or `inf`.
        #[arg(long)]
        budget: Budget,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.9)]
        alpha: f64,
        /// off, wii, wii_coverage, random_skip:<p> or mean_return.
        #[arg(long, default_value = "wii")]
        variant: Variant,
        /// Storage limit as a multiple of total table size.
        #[arg(long)]
        storage_mult: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
        /// Charge c(q, ∅) and c(q, Ω_q) against the budget.
        #[arg(long)]
        charge_setup: bool,
        /// Artificial latency per what-if call, in microseconds.
        #[arg(long)]
        delay_us: Option<u64>,
        /// Write the per-evaluation log to this CSV file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run an experiment matrix and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Check cost-function assumptions and coverage accuracy.
    Validate {
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn load_workload(path: &PathBuf) -> Result<WorkloadFile> {
    let file = WorkloadFile::load(path).with_context(|| format!("loading {}", path.display()))?;
    if file.cost_model.is_none() {
        bail!("{} has no cost_model section", path.display());
    }
    Ok(file)
}

fn run(cli: Cli) -> Result<()> {
    let mode = if cli.sequential { ExecMode::Sequential } else { ExecMode::Parallel };
    match cli.command {
        Command::Generate { params, out } => {
            let text = std::fs::read_to_string(&params).with_context(|| format!("reading {}", params.display()))?;
            let params: GeneratorParams = serde_json::from_str(&text).context("parsing generator parameters")?;
            let (workload, model) = generate(&params)?;
            WorkloadFile {
                workload,
                cost_model: Some(model),
            }
            .save(&out)?;
        }
        Command::Tune {
            workload,
            algo,
            budget,
            k,
            alpha,
            variant,
            storage_mult,
            seed,
            epsilon,
            charge_setup,
            delay_us,
            trace,
        } => {
            let file = load_workload(&workload)?;
            let model = file.cost_model.as_ref().expect("checked on load");
            let limit = storage_mult.map(|m| m * file.workload.total_table_size_mb());
            let mut opts = SearchOptions {
                algorithm: algo,
                budget,
                alpha_threshold: alpha,
                epsilon,
                seed,
                constraints: Constraints::new(k, limit)?,
                charge_setup,
                oracle_delay: delay_us.map(Duration::from_micros),
                trace: trace.is_some(),
                ..Default::default()
            };
            variant.apply(&mut opts);
            let outcome = tune(&file.workload, model, &opts)?;
            if let (Some(path), Some(records)) = (&trace, &outcome.trace) {
                write_eval_log(records, path)?;
            }
            println!("{}", serde_json::to_string_pretty(&outcome.report)?);
        }
        Command::Sweep { config, out_dir } => {
            let config = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let records = run_sweep(&config, mode)?;
            std::fs::create_dir_all(&out_dir)?;
            let path = out_dir.join("sweep.csv");
            write_sweep_csv(&records, &path)?;
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            eprintln!("{} rows ({failed} failed) -> {}", records.len(), path.display());
        }
        Command::Validate { workload, out_dir } => {
            let file = load_workload(&workload)?;
            let model = file.cost_model.as_ref().expect("checked on load");
            let summary = run_validation(&file.workload, model, &out_dir, mode)?;
            let text = serde_json::to_string_pretty(&summary)?;
            std::fs::write(out_dir.join("summary.json"), &text)?;
            println!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
