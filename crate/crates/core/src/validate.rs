//! Checks of the cost-function assumptions and of coverage estimation quality.
//!
//! All oracle calls made here are exempt: validation never touches a tuning budget.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costing::{Budget, SessionConfig, SkipPolicy, WiiSession};
use crate::coverage::{CoverageEstimate, CoverageEstimator};
use crate::error::{Error, Result};
use crate::model::{Configuration, Constraints, IndexId, QueryId, Workload};
use crate::oracle::CostModel;
use crate::par::{self, ExecMode};
use crate::search::greedy_search;

/// Relative slack for cost comparisons.
pub const COST_SLACK: f64 = 1e-12;

/// Relative tolerance of the confidence-error identity.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

/// `cost_large` should not exceed `cost_small` since `small ⊆ large`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonoPoint {
    pub query_id: QueryId,
    pub small: Configuration,
    pub large: Configuration,
    pub cost_small: f64,
    pub cost_large: f64,
}

impl MonoPoint {
    pub fn holds(&self) -> bool {
        self.cost_large <= self.cost_small + COST_SLACK * self.cost_small.abs().max(self.cost_large.abs())
    }
}

/// Costs of `∅`, `{z}`, `{x}` and `{x, z}` for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubmodPoint {
    pub query_id: QueryId,
    pub z: IndexId,
    pub x: IndexId,
    pub c_empty: f64,
    pub c_z: f64,
    pub c_x: f64,
    pub c_xz: f64,
}

impl SubmodPoint {
    /// `δ(q,z,{x}) - δ(q,z,∅)`; positive values break submodularity.
    pub fn delta(&self) -> f64 {
        (self.c_x - self.c_xz) - (self.c_empty - self.c_z)
    }

    pub fn holds(&self) -> bool {
        self.delta() <= COST_SLACK * self.c_empty.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationStats {
    pub total: usize,
    pub holds: usize,
    pub violations: usize,
    pub pct_holds: f64,
    /// Summary of positive δ over violating points (submodularity only).
    pub delta_mean: Option<f64>,
    pub delta_median: Option<f64>,
    pub delta_p95: Option<f64>,
}

impl ValidationStats {
    fn from_flags(flags: impl Iterator<Item = bool>) -> Self {
        let (mut total, mut holds) = (0, 0);
        for ok in flags {
            total += 1;
            holds += usize::from(ok);
        }
        ValidationStats {
            total,
            holds,
            violations: total - holds,
            pct_holds: if total == 0 { 100.0 } else { holds as f64 / total as f64 * 100.0 },
            delta_mean: None,
            delta_median: None,
            delta_p95: None,
        }
    }
}

/// Nearest-rank quantile of ascending `sorted`.
fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn check_monotonicity(points: &[MonoPoint]) -> ValidationStats {
    ValidationStats::from_flags(points.iter().map(MonoPoint::holds))
}

pub fn check_submodularity(points: &[SubmodPoint]) -> ValidationStats {
    let mut stats = ValidationStats::from_flags(points.iter().map(SubmodPoint::holds));
    let mut deltas: Vec<f64> = points.iter().filter(|p| !p.holds()).map(SubmodPoint::delta).collect();
    deltas.sort_by(f64::total_cmp);
    stats.delta_mean = mean(&deltas);
    stats.delta_median = median(&deltas);
    stats.delta_p95 = quantile(&deltas, 0.95);
    stats
}

#[derive(Debug, Clone, Default)]
pub struct ValidationPoints {
    pub mono: Vec<MonoPoint>,
    pub submod: Vec<SubmodPoint>,
    pub exempt_calls: u64,
}

fn points_for_query(w: &Workload, model: &CostModel, q: QueryId) -> Result<ValidationPoints> {
    let config = SessionConfig {
        budget: Budget::Unlimited,
        policy: SkipPolicy::Never,
        charge_calls: false,
        ..Default::default()
    };
    let mut session = WiiSession::scoped(w, model, config, &[q])?;
    let candidates = session.candidates(q).to_vec();
    greedy_search(&mut session, &[q], &candidates, &Constraints::cardinality(2))?;

    let cache = session.cache();
    let c_empty = cache.empty_cost(q)?;
    let mut pairs: Vec<&Configuration> = cache.entries(q).map(|(c, _)| c).filter(|c| c.len() == 2).collect();
    pairs.sort();
    let mut out = ValidationPoints::default();
    for &z in &candidates {
        let single_z = Configuration::singleton(z);
        let Some(c_z) = cache.get(q, &single_z) else { continue };
        for parent in pairs.iter().filter(|p| p.contains(z)) {
            let x = parent.iter().find(|&i| i != z).expect("pair has two ids");
            let (Some(c_x), Some(c_xz)) = (cache.get(q, &Configuration::singleton(x)), cache.get(q, parent)) else {
                continue;
            };
            let empty = Configuration::empty();
            for (small, large, cs, cl) in [
                (&empty, &single_z, c_empty, c_z),
                (&empty, *parent, c_empty, c_xz),
                (&single_z, *parent, c_z, c_xz),
            ] {
                out.mono.push(MonoPoint {
                    query_id: q,
                    small: small.clone(),
                    large: large.clone(),
                    cost_small: cs,
                    cost_large: cl,
                });
            }
            out.submod.push(SubmodPoint {
                query_id: q,
                z,
                x,
                c_empty,
                c_z,
                c_x,
                c_xz,
            });
        }
    }
    out.exempt_calls = session.meter().exempt_calls();
    Ok(out)
}

/// Per query, runs greedy on `{q}` with `K = 2` and unlimited exempt calls,
/// then emits monotonicity pairs and submodularity quadruples for every
/// explored parent `{x, z}` of each candidate `z`.
pub fn collect_validation_points(w: &Workload, model: &CostModel, mode: ExecMode) -> Result<ValidationPoints> {
    let queries: Vec<QueryId> = w.query_ids().collect();
    let per_query = par::map(mode, &queries, |&q| points_for_query(w, model, q));
    let mut all = ValidationPoints::default();
    for part in per_query {
        let part = part?;
        all.mono.extend(part.mono);
        all.submod.extend(part.submod);
        all.exempt_calls += part.exempt_calls;
    }
    Ok(all)
}

/// Violation frequency among points whose pair may interact in the model,
/// next to the model's realized interaction density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationAudit {
    pub eligible_points: usize,
    pub eligible_violations: usize,
    pub violation_frequency: f64,
    pub realized_pair_density: f64,
    /// Violating points whose pair has no bonus in the model; should be 0.
    pub unexplained: usize,
}

pub fn audit_violations(points: &[SubmodPoint], model: &CostModel) -> Result<ViolationAudit> {
    let (mut eligible, mut violations, mut unexplained) = (0, 0, 0);
    for p in points {
        let bonus = model.pair_bonus(p.query_id, p.x, p.z)?;
        if !p.holds() && bonus <= 0.0 {
            unexplained += 1;
        }
        if model.pair_eligible(p.query_id, p.x, p.z)? {
            eligible += 1;
            violations += usize::from(!p.holds());
        }
    }
    Ok(ViolationAudit {
        eligible_points: eligible,
        eligible_violations: violations,
        violation_frequency: if eligible == 0 { 0.0 } else { violations as f64 / eligible as f64 },
        realized_pair_density: model.realized_pair_density(),
        unexplained,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageErrorPoint {
    pub query_id: QueryId,
    pub z: IndexId,
    pub rho: f64,
    pub rho_hat: f64,
    pub clamped: bool,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageErrors {
    pub points: Vec<CoverageErrorPoint>,
    /// Pairs skipped because `Δ(q, Ω_q) = 0`.
    pub excluded: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// `(threshold, fraction of errors ≤ threshold)`.
    pub cdf: Vec<(f64, f64)>,
}

pub const CDF_THRESHOLDS: [f64; 11] = [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0];

/// `|ρ̂ - ρ|` for every (query, candidate) pair, with true coverage from exempt costs.
pub fn coverage_error_distribution(w: &Workload, model: &CostModel, mode: ExecMode) -> Result<CoverageErrors> {
    let estimator = CoverageEstimator::new(w)?;
    let candidates = w.candidate_map();
    let queries: Vec<QueryId> = w.query_ids().collect();
    let per_query = par::map(mode, &queries, |&q| -> Result<(Vec<CoverageErrorPoint>, usize)> {
        let omega = model.optimal_plan_indexes(q)?;
        let empty = model.cost(q, &Configuration::empty())?;
        let delta = empty - model.cost(q, &omega)?;
        if delta <= 0.0 {
            return Ok((Vec::new(), candidates[q.index()].len()));
        }
        let mut out = Vec::new();
        for &z in &candidates[q.index()] {
            let rho = (empty - model.cost(q, &Configuration::singleton(z))?) / delta;
            let est = estimator.estimate(q, z, &omega)?;
            out.push(CoverageErrorPoint {
                query_id: q,
                z,
                rho,
                rho_hat: est.rho_hat,
                clamped: est.clamped,
                abs_error: (est.rho_hat - rho).abs(),
            });
        }
        Ok((out, 0))
    });
    let mut points = Vec::new();
    let mut excluded = 0;
    for part in per_query {
        let (p, e) = part?;
        points.extend(p);
        excluded += e;
    }
    let mut errors: Vec<f64> = points.iter().map(|p| p.abs_error).collect();
    errors.sort_by(f64::total_cmp);
    let n = errors.len().max(1) as f64;
    let cdf = CDF_THRESHOLDS
        .iter()
        .map(|&t| (t, errors.partition_point(|&e| e <= t) as f64 / n))
        .collect();
    Ok(CoverageErrors {
        mean: mean(&errors),
        median: median(&errors),
        cdf,
        points,
        excluded,
    })
}

/// Inputs of the confidence-error identity for one `(q, C)`: the lower bound
/// is built purely from coverage, once with true and once with estimated values.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityTerms {
    pub empty_cost: f64,
    pub omega_cost: f64,
    pub upper: f64,
    pub rho: Vec<f64>,
    pub rho_hat: Vec<CoverageEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityCheck {
    pub alpha: f64,
    pub alpha_hat: f64,
    pub residual: f64,
}

impl IdentityCheck {
    pub fn within_tolerance(&self, upper: f64) -> bool {
        self.residual <= IDENTITY_TOLERANCE * upper
    }
}

/// `|U·(α̂ - α) - Δ(q,Ω_q)·Σ(ρ - ρ̂)|` with unclamped bounds.
pub fn confidence_error_identity(t: &IdentityTerms) -> Result<IdentityCheck> {
    if t.rho.len() != t.rho_hat.len() {
        return Err(Error::input("ρ and ρ̂ must cover the same indexes"));
    }
    if t.rho_hat.iter().any(|e| e.clamped) {
        return Err(Error::state("identity requires unclamped coverage estimates"));
    }
    if !(t.upper > 0.0) {
        return Err(Error::input(format!("upper bound must be positive, got {}", t.upper)));
    }
    let delta = t.empty_cost - t.omega_cost;
    let sum_rho: f64 = t.rho.iter().sum();
    let sum_hat: f64 = t.rho_hat.iter().map(|e| e.rho_hat).sum();
    let alpha = (t.empty_cost - delta * sum_rho) / t.upper;
    let alpha_hat = (t.empty_cost - delta * sum_hat) / t.upper;
    let residual = (t.upper * (alpha_hat - alpha) - delta * (sum_rho - sum_hat)).abs();
    Ok(IdentityCheck {
        alpha,
        alpha_hat,
        residual,
    })
}

/// Identity terms for `(q, C)` from the model (true coverage) and the
/// estimator (estimated coverage); `U` is the derived cost over `∅` and the
/// singletons of `C`.
pub fn identity_terms(
    q: QueryId,
    config: &Configuration,
    model: &CostModel,
    estimator: &CoverageEstimator,
) -> Result<IdentityTerms> {
    let omega = model.optimal_plan_indexes(q)?;
    let empty_cost = model.cost(q, &Configuration::empty())?;
    let omega_cost = model.cost(q, &omega)?;
    let delta = empty_cost - omega_cost;
    let mut upper = empty_cost;
    let mut rho = Vec::with_capacity(config.len());
    let mut rho_hat = Vec::with_capacity(config.len());
    for z in config.iter() {
        let c = model.cost(q, &Configuration::singleton(z))?;
        upper = upper.min(c);
        rho.push(if delta > 0.0 { (empty_cost - c) / delta } else { 0.0 });
        rho_hat.push(estimator.estimate(q, z, &omega)?);
    }
    Ok(IdentityTerms {
        empty_cost,
        omega_cost,
        upper,
        rho,
        rho_hat,
    })
}

pub fn write_mono_csv(points: &[MonoPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["query_id", "small", "large", "cost_small", "cost_large", "holds"])?;
    for p in points {
        w.write_record([
            p.query_id.to_string(),
            p.small.to_string(),
            p.large.to_string(),
            p.cost_small.to_string(),
            p.cost_large.to_string(),
            p.holds().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_submod_csv(points: &[SubmodPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["query_id", "z", "x", "c_empty", "c_z", "c_x", "c_xz", "delta", "holds"])?;
    for p in points {
        w.write_record([
            p.query_id.to_string(),
            p.z.to_string(),
            p.x.to_string(),
            p.c_empty.to_string(),
            p.c_z.to_string(),
            p.c_x.to_string(),
            p.c_xz.to_string(),
            p.delta().to_string(),
            p.holds().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_coverage_csv(errors: &CoverageErrors, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["query_id", "z", "rho", "rho_hat", "clamped", "abs_error"])?;
    for p in &errors.points {
        w.write_record([
            p.query_id.to_string(),
            p.z.to_string(),
            p.rho.to_string(),
            p.rho_hat.to_string(),
            p.clamped.to_string(),
            p.abs_error.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub monotonicity: ValidationStats,
    pub submodularity: ValidationStats,
    pub audit: ViolationAudit,
    pub coverage_points: usize,
    pub coverage_excluded: usize,
    pub coverage_mean_error: Option<f64>,
    pub coverage_median_error: Option<f64>,
    pub coverage_cdf: Vec<(f64, f64)>,
    pub exempt_calls: u64,
}

/// Runs every check and writes `mono.csv`, `submod.csv` and `coverage_err.csv` into `out_dir`.
pub fn run_validation(
    w: &Workload,
    model: &CostModel,
    out_dir: impl AsRef<Path>,
    mode: ExecMode,
) -> Result<ValidationSummary> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let points = collect_validation_points(w, model, mode)?;
    let coverage = coverage_error_distribution(w, model, mode)?;
    write_mono_csv(&points.mono, out_dir.join("mono.csv"))?;
    write_submod_csv(&points.submod, out_dir.join("submod.csv"))?;
    write_coverage_csv(&coverage, out_dir.join("coverage_err.csv"))?;
    Ok(ValidationSummary {
        monotonicity: check_monotonicity(&points.mono),
        submodularity: check_submodularity(&points.submod),
        audit: audit_violations(&points.submod, model)?,
        coverage_points: coverage.points.len(),
        coverage_excluded: coverage.excluded,
        coverage_mean_error: coverage.mean,
        coverage_median_error: coverage.median,
        coverage_cdf: coverage.cdf,
        exempt_calls: points.exempt_calls,
    })
}
