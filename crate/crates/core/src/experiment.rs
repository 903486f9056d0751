//! Single tuning runs and parameter sweeps with CSV reporting.

use std::cmp::Ordering;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::costing::{Budget, ReturnOnSkip, SkipPolicy};
use crate::error::{Error, Result};
use crate::model::{Constraints, Workload};
use crate::oracle::{generate, CostModel, GeneratorParams, WorkloadFile};
use crate::par::{self, ExecMode};
use crate::search::{tune, Algorithm, SearchOptions, TuningReport};

/// How the search treats what-if calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Variant {
    /// Never skip; the baseline.
    Off,
    Wii,
    WiiCoverage,
    /// Skip with fixed probability regardless of the bounds.
    RandomSkip(f64),
    /// Confidence skipping that returns the midpoint of the bounds.
    MeanReturn,
}

impl Variant {
    pub fn apply(self, opts: &mut SearchOptions) {
        opts.wii_enabled = self != Variant::Off;
        opts.coverage_enabled = self == Variant::WiiCoverage;
        opts.skip_policy = match self {
            Variant::RandomSkip(p) => SkipPolicy::Random(p),
            Variant::Off => SkipPolicy::Never,
            _ => SkipPolicy::Confidence,
        };
        opts.return_on_skip = if self == Variant::MeanReturn {
            ReturnOnSkip::Mean
        } else {
            ReturnOnSkip::Upper
        };
    }

    fn rank(self) -> (u8, f64) {
        match self {
            Variant::Off => (0, 0.0),
            Variant::Wii => (1, 0.0),
            Variant::WiiCoverage => (2, 0.0),
            Variant::RandomSkip(p) => (3, p),
            Variant::MeanReturn => (4, 0.0),
        }
    }

    fn cmp_key(self, other: Self) -> Ordering {
        let (a, pa) = self.rank();
        let (b, pb) = other.rank();
        a.cmp(&b).then(pa.total_cmp(&pb))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Off => f.write_str("off"),
            Variant::Wii => f.write_str("wii"),
            Variant::WiiCoverage => f.write_str("wii_coverage"),
            Variant::RandomSkip(p) => write!(f, "random_skip:{p}"),
            Variant::MeanReturn => f.write_str("mean_return"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Variant::Off),
            "wii" => Ok(Variant::Wii),
            "wii_coverage" => Ok(Variant::WiiCoverage),
            "mean_return" => Ok(Variant::MeanReturn),
            _ => {
                let p = s
                    .strip_prefix("random_skip:")
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| Error::input(format!("unknown variant `{s}`")))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::input(format!("random skip probability {p} outside [0, 1]")));
                }
                Ok(Variant::RandomSkip(p))
            }
        }
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadSource {
    /// Generated per seed; the cell seed overrides `params.seed`.
    Generate(GeneratorParams),
    /// A workload file that must include its cost model.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub workload: WorkloadSource,
    pub algorithms: Vec<Algorithm>,
    pub budgets: Vec<Budget>,
    pub ks: Vec<usize>,
    pub alphas: Vec<f64>,
    pub variants: Vec<Variant>,
    /// Storage limit as a multiple of total table size; `null` for none.
    #[serde(default = "no_storage_limit")]
    pub storage_multipliers: Vec<Option<f64>>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub charge_setup: bool,
    /// Artificial latency per what-if call, in microseconds.
    #[serde(default)]
    pub oracle_delay_us: Option<u64>,
}

fn no_storage_limit() -> Vec<Option<f64>> {
    vec![None]
}

fn default_epsilon() -> f64 {
    0.2
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("algorithms", self.algorithms.len()),
            ("budgets", self.budgets.len()),
            ("ks", self.ks.len()),
            ("alphas", self.alphas.len()),
            ("variants", self.variants.len()),
            ("storage_multipliers", self.storage_multipliers.len()),
            ("seeds", self.seeds.len()),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, n)| *n == 0) {
            return Err(Error::input(format!("experiment dimension `{name}` is empty")));
        }
        Ok(())
    }

    /// Every matrix cell times every seed, in row order.
    pub fn cells(&self) -> Vec<Cell> {
        fn sorted<T: Copy>(xs: &[T], cmp: impl Fn(&T, &T) -> Ordering) -> Vec<T> {
            let mut v = xs.to_vec();
            v.sort_by(&cmp);
            v.dedup_by(|a, b| cmp(a, b) == Ordering::Equal);
            v
        }
        let algorithms = sorted(&self.algorithms, Ord::cmp);
        let budgets = sorted(&self.budgets, Ord::cmp);
        let ks = sorted(&self.ks, Ord::cmp);
        let alphas = sorted(&self.alphas, |a, b| a.total_cmp(b));
        let variants = sorted(&self.variants, |a, b| a.cmp_key(*b));
        let storage = sorted(&self.storage_multipliers, |a, b| match (a, b) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some(x), Some(y)) => x.total_cmp(y),
        });
        let seeds = sorted(&self.seeds, Ord::cmp);
        let mut out = Vec::new();
        for &algorithm in &algorithms {
            for &budget in &budgets {
                for &k in &ks {
                    for &alpha in &alphas {
                        for &variant in &variants {
                            for &storage_mult in &storage {
                                for &seed in &seeds {
                                    out.push(Cell {
                                        algorithm,
                                        budget,
                                        k,
                                        alpha,
                                        variant,
                                        storage_mult,
                                        seed,
                                        epsilon: self.epsilon,
                                        charge_setup: self.charge_setup,
                                        oracle_delay: self.oracle_delay_us.map(Duration::from_micros),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// One run coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub algorithm: Algorithm,
    pub budget: Budget,
    pub k: usize,
    pub alpha: f64,
    pub variant: Variant,
    pub storage_mult: Option<f64>,
    pub seed: u64,
    pub epsilon: f64,
    pub charge_setup: bool,
    pub oracle_delay: Option<Duration>,
}

impl Cell {
    pub fn options(&self, workload: &Workload) -> Result<SearchOptions> {
        let limit = self.storage_mult.map(|m| m * workload.total_table_size_mb());
        let mut opts = SearchOptions {
            algorithm: self.algorithm,
            budget: self.budget,
            alpha_threshold: self.alpha,
            epsilon: self.epsilon,
            seed: self.seed,
            constraints: Constraints::new(self.k, limit)?,
            charge_setup: self.charge_setup,
            oracle_delay: self.oracle_delay,
            ..Default::default()
        };
        self.variant.apply(&mut opts);
        Ok(opts)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "algorithm={} budget={} k={} alpha={} variant={} storage_mult={} seed={}",
            self.algorithm,
            self.budget,
            self.k,
            self.alpha,
            self.variant,
            self.storage_mult.map(|m| m.to_string()).unwrap_or_else(|| "none".into()),
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub cell: Cell,
    pub report: Option<TuningReport>,
    pub error: Option<String>,
}

impl RunRecord {
    /// `skipped_calls / B` for a finite, nonzero budget.
    pub fn skipped_ratio(&self) -> Option<f64> {
        let report = self.report.as_ref()?;
        match self.cell.budget {
            Budget::Finite(b) if b > 0 => Some(report.skipped_calls as f64 / b as f64),
            _ => None,
        }
    }
}

/// Runs one cell against an already loaded workload and model.
pub fn run_single(cell: &Cell, workload: &Workload, model: &CostModel) -> Result<RunRecord> {
    let opts = cell
        .options(workload)
        .map_err(|e| Error::input(format!("cell [{cell}]: {e}")))?;
    let outcome = tune(workload, model, &opts).map_err(|e| match e {
        Error::Input(m) => Error::input(format!("cell [{cell}]: {m}")),
        other => other,
    })?;
    Ok(RunRecord {
        cell: *cell,
        report: Some(outcome.report),
        error: None,
    })
}

fn load_source(source: &WorkloadSource, seed: u64) -> Result<(Workload, CostModel)> {
    match source {
        WorkloadSource::Generate(params) => generate(&GeneratorParams {
            seed,
            ..params.clone()
        }),
        WorkloadSource::File(path) => {
            let file = WorkloadFile::load(path)?;
            let model = file
                .cost_model
                .ok_or_else(|| Error::input(format!("{} has no cost model", path.display())))?;
            Ok((file.workload, model))
        }
    }
}

/// Executes the full cross product. Failed cells become rows with an error message.
pub fn run_sweep(config: &ExperimentConfig, mode: ExecMode) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let cells = config.cells();
    let shared = match &config.workload {
        WorkloadSource::File(_) => Some(load_source(&config.workload, 0)?),
        WorkloadSource::Generate(_) => None,
    };
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let generated: Vec<Result<(Workload, CostModel)>> = match shared {
        Some(_) => Vec::new(),
        None => par::map(mode, &seeds, |&s| load_source(&config.workload, s)),
    };
    let records = par::map(mode, &cells, |cell| {
        let loaded = match &shared {
            Some(wm) => Ok(wm),
            None => {
                let pos = seeds.binary_search(&cell.seed).expect("cell seeds come from the seed list");
                generated[pos].as_ref().map_err(|e| e.to_string())
            }
        };
        let result = loaded.and_then(|(w, m)| run_single(cell, w, m).map_err(|e| e.to_string()));
        result.unwrap_or_else(|error| RunRecord {
            cell: *cell,
            report: None,
            error: Some(error),
        })
    });
    Ok(records)
}

/// Sweep CSV columns, in order.
pub const SWEEP_COLUMNS: [&str; 33] = [
    "algorithm",
    "budget",
    "k",
    "alpha",
    "variant",
    "storage_mult",
    "seed",
    "final_configuration",
    "final_cost",
    "estimated_cost",
    "empty_cost",
    "improvement_pct",
    "budget_final",
    "charged_calls",
    "charged_setup_calls",
    "exempt_setup_calls",
    "evals",
    "issued_calls",
    "skipped_calls",
    "cached_hits",
    "exhausted_evals",
    "bound_evals",
    "skipped_ratio",
    "mcts_policy",
    "phase1_ms",
    "phase2_ms",
    "total_ms",
    "bound_time_ms",
    "mean_bound_us",
    "mean_whatif_us",
    "epsilon",
    "charge_setup",
    "error",
];

/// Columns holding wall-clock measurements; excluded from determinism checks.
pub const TIMING_COLUMNS: [&str; 6] = [
    "phase1_ms",
    "phase2_ms",
    "total_ms",
    "bound_time_ms",
    "mean_bound_us",
    "mean_whatif_us",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn record_row(r: &RunRecord) -> Vec<String> {
    let c = &r.cell;
    let mut row = vec![
        c.algorithm.to_string(),
        c.budget.to_string(),
        c.k.to_string(),
        c.alpha.to_string(),
        c.variant.to_string(),
        c.storage_mult.map(|m| m.to_string()).unwrap_or_else(|| "none".into()),
        c.seed.to_string(),
    ];
    match &r.report {
        Some(t) => row.extend([
            t.final_configuration.to_string(),
            t.final_cost.to_string(),
            t.estimated_cost.to_string(),
            t.empty_cost.to_string(),
            t.improvement_pct.to_string(),
            t.budget_final.to_string(),
            t.charged_calls.to_string(),
            t.charged_setup_calls.to_string(),
            t.exempt_setup_calls.to_string(),
            t.evals.to_string(),
            t.issued_calls.to_string(),
            t.skipped_calls.to_string(),
            t.cached_hits.to_string(),
            t.exhausted_evals.to_string(),
            t.bound_evals.to_string(),
            opt(r.skipped_ratio()),
            t.mcts_policy.clone().unwrap_or_default(),
            t.phase1_ms.to_string(),
            t.phase2_ms.to_string(),
            t.total_ms.to_string(),
            t.bound_time_ms.to_string(),
            opt(t.mean_bound_us),
            opt(t.mean_whatif_us),
        ]),
        None => row.extend(std::iter::repeat_n(String::new(), 23)),
    }
    row.extend([c.epsilon.to_string(), c.charge_setup.to_string(), r.error.clone().unwrap_or_default()]);
    row
}

pub fn write_sweep_csv(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_COLUMNS)?;
    for r in records {
        w.write_record(record_row(r))?;
    }
    w.flush()?;
    Ok(())
}
