use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    confidence, derived_cost, generalized_lower_bound, init_mci_bounds, lower_bound, update_mci_bounds,
    MciBounds, WhatIfCache,
};
use crate::coverage::{CoverageEstimate, CoverageEstimator};
use crate::error::{Error, Result};
use crate::model::{candidate_indexes_for_query, Configuration, IndexId, QueryId, Workload};
use crate::oracle::{CostModel, Oracle, OracleMeter};
use crate::rng::{self, Stream, StreamRng};

/// Remaining number of charged what-if calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "BudgetRepr", try_from = "BudgetRepr")]
pub enum Budget {
    Finite(u64),
    Unlimited,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BudgetRepr {
    Num(u64),
    Text(String),
}

impl From<Budget> for BudgetRepr {
    fn from(b: Budget) -> Self {
        match b {
            Budget::Finite(n) => BudgetRepr::Num(n),
            Budget::Unlimited => BudgetRepr::Text("inf".into()),
        }
    }
}

impl TryFrom<BudgetRepr> for Budget {
    type Error = Error;

    fn try_from(r: BudgetRepr) -> Result<Self> {
        match r {
            BudgetRepr::Num(n) => Ok(Budget::Finite(n)),
            BudgetRepr::Text(s) => s.parse(),
        }
    }
}

impl Budget {
    pub fn is_exhausted(self) -> bool {
        self == Budget::Finite(0)
    }

    /// `None` for an unlimited budget.
    pub fn remaining(self) -> Option<u64> {
        match self {
            Budget::Finite(n) => Some(n),
            Budget::Unlimited => None,
        }
    }

    fn consume(&mut self) {
        if let Budget::Finite(n) = self {
            *n = n.checked_sub(1).expect("consume on exhausted budget");
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Finite(n) => write!(f, "{n}"),
            Budget::Unlimited => f.write_str("inf"),
        }
    }
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "unlimited" | "∞" => Ok(Budget::Unlimited),
            t => t
                .parse::<u64>()
                .map(Budget::Finite)
                .map_err(|_| Error::input(format!("invalid budget `{s}`"))),
        }
    }
}

/// When an uncached, within-budget evaluation may skip the what-if call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipPolicy {
    Never,
    /// Skip when `L/U` reaches the session's confidence threshold.
    Confidence,
    /// Skip with the given probability, ignoring the bounds.
    Random(f64),
}

/// Value returned for a skipped call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnOnSkip {
    /// The derived cost `U(q, C)`.
    #[default]
    Upper,
    /// `(L + U) / 2`.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalKind {
    Cached,
    BudgetExhausted,
    Skipped,
    WhatIfIssued,
}

impl fmt::Display for EvalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalKind::Cached => "cached",
            EvalKind::BudgetExhausted => "budget_exhausted",
            EvalKind::Skipped => "skipped",
            EvalKind::WhatIfIssued => "what_if_issued",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOutcome {
    pub cost: f64,
    pub remaining_budget: Budget,
    pub kind: EvalKind,
    pub confidence: Option<f64>,
}

/// One row of the evaluation trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    pub query_id: QueryId,
    pub config: Configuration,
    pub kind: EvalKind,
    pub cost: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub alpha: Option<f64>,
    pub budget_left: Budget,
}

pub const EVAL_LOG_HEADER: [&str; 9] = ["step", "query_id", "config", "kind", "cost", "L", "U", "alpha", "budget_left"];

/// Writes `records` as `eval_log.csv` rows (header included).
pub fn write_eval_log(records: &[EvalRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EVAL_LOG_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.step.to_string(),
            r.query_id.to_string(),
            r.config.to_string(),
            r.kind.to_string(),
            r.cost.to_string(),
            opt(r.lower),
            opt(r.upper),
            opt(r.alpha),
            r.budget_left.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Specialized vs. generalized lower bound at one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundSample {
    pub query_id: QueryId,
    pub config: Configuration,
    pub subset: Configuration,
    pub specialized: f64,
    pub generalized: f64,
    pub empty_cost: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalStats {
    pub evals: u64,
    pub cached: u64,
    pub skipped: u64,
    pub issued: u64,
    pub exhausted: u64,
    pub bound_evals: u64,
    pub bound_time: Duration,
    pub whatif_time: Duration,
}

impl EvalStats {
    pub fn mean_bound_time(&self) -> Option<Duration> {
        (self.bound_evals > 0).then(|| self.bound_time / self.bound_evals as u32)
    }

    pub fn mean_whatif_time(&self) -> Option<Duration> {
        (self.issued > 0).then(|| self.whatif_time / self.issued as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub budget: Budget,
    pub alpha: f64,
    pub policy: SkipPolicy,
    pub return_on_skip: ReturnOnSkip,
    /// Charge the setup calls `c(q,∅)` and `c(q,Ω_q)` against the budget.
    pub charge_setup: bool,
    /// Use coverage-estimated MCI bounds for indexes with unknown singleton cost.
    pub coverage: bool,
    pub seed: u64,
    pub trace: bool,
    pub log_calls: bool,
    pub oracle_delay: Option<Duration>,
    /// When false every oracle call is exempt (analysis runs).
    pub charge_calls: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            budget: Budget::Unlimited,
            alpha: 0.9,
            policy: SkipPolicy::Confidence,
            return_on_skip: ReturnOnSkip::Upper,
            charge_setup: false,
            coverage: false,
            seed: 0,
            trace: false,
            log_calls: false,
            oracle_delay: None,
            charge_calls: true,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::input(format!("alpha threshold {} outside [0, 1]", self.alpha)));
        }
        if let SkipPolicy::Random(p) = self.policy {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::input(format!("random skip probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A tuning session: the oracle meter, the what-if cache, MCI bounds and the
/// remaining budget, driven through [`WiiSession::eval_cost`].
pub struct WiiSession<'a> {
    workload: &'a Workload,
    oracle: Oracle<'a>,
    candidates: Vec<Vec<IndexId>>,
    cache: WhatIfCache,
    bounds: MciBounds,
    budget: Budget,
    initial_budget: Budget,
    config: SessionConfig,
    skip_rng: StreamRng,
    coverage: Option<Vec<HashMap<IndexId, CoverageEstimate>>>,
    stats: EvalStats,
    trace: Option<Vec<EvalRecord>>,
    lower_bound_probe: Option<Vec<LowerBoundSample>>,
    setup_charged: u64,
    setup_exempt: u64,
}

impl<'a> WiiSession<'a> {
    /// Validates inputs and fetches `c(q,∅)` and `c(q,Ω_q)` for every query.
    pub fn new(workload: &'a Workload, model: &'a CostModel, config: SessionConfig) -> Result<Self> {
        let all: Vec<QueryId> = workload.query_ids().collect();
        Self::scoped(workload, model, config, &all)
    }

    /// Like [`WiiSession::new`], but only sets up the queries in `scope`;
    /// evaluating any other query is a state error.
    pub fn scoped(
        workload: &'a Workload,
        model: &'a CostModel,
        config: SessionConfig,
        scope: &[QueryId],
    ) -> Result<Self> {
        config.validate()?;
        if model.n_queries() != workload.queries.len() || model.n_indexes != workload.indexes.len() {
            return Err(Error::input("cost model does not match workload dimensions"));
        }
        let mut oracle = Oracle::new(model).with_delay(config.oracle_delay);
        if config.log_calls {
            oracle = oracle.with_log();
        }
        let n = workload.queries.len();
        let charge = config.charge_setup && config.charge_calls;
        let mut budget = config.budget;
        if charge {
            if let Some(b) = budget.remaining() {
                if b < scope.len() as u64 {
                    return Err(Error::input(format!(
                        "budget {b} cannot cover the {} charged setup calls for c(q, ∅)",
                        scope.len()
                    )));
                }
            }
        }
        let mut cache = WhatIfCache::new(n);
        let (mut setup_charged, mut setup_exempt) = (0, 0);
        for &q in scope {
            workload.query(q)?;
            let empty = oracle.what_if(q, &Configuration::empty(), charge)?;
            if charge {
                budget.consume();
                setup_charged += 1;
            } else {
                setup_exempt += 1;
            }
            cache.insert(q, Configuration::empty(), empty)?;
        }
        for &q in scope {
            let omega = model.optimal_plan_indexes(q)?;
            if omega.is_empty() {
                let empty = cache.empty_cost(q)?;
                cache.set_optimal(q, omega, empty)?;
                continue;
            }
            if charge && budget.is_exhausted() {
                continue;
            }
            let cost = oracle.what_if(q, &omega, charge)?;
            if charge {
                budget.consume();
                setup_charged += 1;
            } else {
                setup_exempt += 1;
            }
            cache.set_optimal(q, omega, cost)?;
        }

        let mut candidates = vec![Vec::new(); n];
        for &q in scope {
            candidates[q.index()] = candidate_indexes_for_query(workload.query(q)?, &workload.indexes)
                .into_iter()
                .map(|z| z.id)
                .collect();
        }
        let coverage = if config.coverage {
            let estimator = CoverageEstimator::new(workload)?;
            let mut per_query = Vec::with_capacity(n);
            for q in workload.query_ids() {
                let mut m = HashMap::new();
                if let Some(omega) = cache.omega_config(q) {
                    for &z in &candidates[q.index()] {
                        m.insert(z, estimator.estimate(q, z, omega)?);
                    }
                }
                per_query.push(m);
            }
            Some(per_query)
        } else {
            None
        };

        Ok(WiiSession {
            workload,
            oracle,
            candidates,
            cache,
            bounds: MciBounds::new(n),
            budget,
            initial_budget: config.budget,
            skip_rng: rng::stream(config.seed, Stream::RandomSkip),
            trace: config.trace.then(Vec::new),
            config,
            coverage,
            stats: EvalStats::default(),
            lower_bound_probe: None,
            setup_charged,
            setup_exempt,
        })
    }

    pub fn workload(&self) -> &'a Workload {
        self.workload
    }

    pub fn model(&self) -> &'a CostModel {
        self.oracle.model()
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn cache(&self) -> &WhatIfCache {
        &self.cache
    }

    pub fn bounds(&self) -> &MciBounds {
        &self.bounds
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn initial_budget(&self) -> Budget {
        self.initial_budget
    }

    pub fn stats(&self) -> &EvalStats {
        &self.stats
    }

    pub fn meter(&self) -> &OracleMeter {
        self.oracle.meter()
    }

    pub fn setup_charged_calls(&self) -> u64 {
        self.setup_charged
    }

    pub fn setup_exempt_calls(&self) -> u64 {
        self.setup_exempt
    }

    pub fn trace(&self) -> Option<&[EvalRecord]> {
        self.trace.as_deref()
    }

    /// Candidate indexes of `q`, ascending.
    pub fn candidates(&self, q: QueryId) -> &[IndexId] {
        &self.candidates[q.index()]
    }

    /// Coverage estimate for `(q, z)` when coverage is enabled.
    pub fn coverage_estimate(&self, q: QueryId, z: IndexId) -> Option<CoverageEstimate> {
        self.coverage.as_ref()?.get(q.index())?.get(&z).copied()
    }

    /// `C` restricted to the candidates of `q`; the cost of `q` only depends on these.
    pub fn relevant(&self, q: QueryId, config: &Configuration) -> Configuration {
        config.restrict_to(&self.candidates[q.index()])
    }

    pub fn record_lower_bound_probe(&mut self, on: bool) {
        self.lower_bound_probe = on.then(Vec::new);
    }

    pub fn lower_bound_samples(&self) -> Option<&[LowerBoundSample]> {
        self.lower_bound_probe.as_deref()
    }

    /// Resets the MCI bounds for `queries` over the candidate indexes in `indexes`,
    /// then applies coverage estimates where singleton costs are still unknown.
    pub fn init_bounds(&mut self, queries: &[QueryId], indexes: &[IndexId]) -> Result<()> {
        self.bounds = init_mci_bounds(queries, indexes, &self.candidates, &self.cache)?;
        if let Some(coverage) = &self.coverage {
            for &q in queries {
                let Some(omega) = self.cache.omega_cost(q) else { continue };
                let delta = self.cache.empty_cost(q)? - omega;
                for (&z, est) in &coverage[q.index()] {
                    if indexes.contains(&z) && !self.cache.contains(q, &Configuration::singleton(z)) {
                        self.bounds.set_estimate(q, z, est.rho_hat * delta);
                    }
                }
            }
        }
        Ok(())
    }

    /// Cost of `(q, C)` under the budget, skipping the what-if call when the
    /// bounds are tight enough. `subset` is a subset of `C` whose cost is
    /// typically known (the greedy incumbent, or `∅`).
    pub fn eval_cost(&mut self, q: QueryId, config: &Configuration, subset: &Configuration) -> Result<EvalOutcome> {
        if !subset.is_subset_of(config) {
            return Err(Error::input(format!("{{{subset}}} is not a subset of {{{config}}}")));
        }
        self.stats.evals += 1;
        let subset_known = self.cache.contains(q, subset);

        if let Some(cost) = self.cache.get(q, config) {
            if subset_known {
                update_mci_bounds(q, config, subset, &self.cache, &mut self.bounds)?;
            }
            self.stats.cached += 1;
            return Ok(self.finish(q, config, EvalKind::Cached, cost, None));
        }

        if self.budget.is_exhausted() {
            let cost = derived_cost(q, config, &self.cache)?;
            self.stats.exhausted += 1;
            return Ok(self.finish(q, config, EvalKind::BudgetExhausted, cost, None));
        }

        let mut bounds_seen = None;
        if self.config.policy != SkipPolicy::Never {
            let started = Instant::now();
            let upper = derived_cost(q, config, &self.cache)?;
            let raw_lower = if subset_known {
                lower_bound(q, config, subset, &self.bounds, &self.cache)?
            } else {
                generalized_lower_bound(q, config, &self.bounds, &self.cache)?
            };
            let lower = raw_lower.min(upper);
            let alpha = confidence(lower, upper)?;
            self.stats.bound_time += started.elapsed();
            self.stats.bound_evals += 1;
            if subset_known {
                self.probe_lower_bound(q, config, subset, raw_lower)?;
            }
            bounds_seen = Some((lower, upper, alpha));

            let skip = match self.config.policy {
                SkipPolicy::Confidence => alpha >= self.config.alpha,
                SkipPolicy::Random(p) => self.skip_rng.random::<f64>() < p,
                SkipPolicy::Never => false,
            };
            if skip {
                let cost = match self.config.return_on_skip {
                    ReturnOnSkip::Upper => upper,
                    ReturnOnSkip::Mean => 0.5 * (lower + upper),
                };
                self.stats.skipped += 1;
                return Ok(self.finish(q, config, EvalKind::Skipped, cost, bounds_seen));
            }
        }

        let started = Instant::now();
        let cost = self.oracle.what_if(q, config, self.config.charge_calls)?;
        self.stats.whatif_time += started.elapsed();
        self.stats.issued += 1;
        if self.config.charge_calls {
            self.budget.consume();
        }
        self.cache.insert(q, config.clone(), cost)?;
        if let [z] = config.ids() {
            self.bounds.clear_estimate(q, *z);
        }
        if subset_known {
            update_mci_bounds(q, config, subset, &self.cache, &mut self.bounds)?;
        }
        Ok(self.finish(q, config, EvalKind::WhatIfIssued, cost, bounds_seen))
    }

    fn probe_lower_bound(&mut self, q: QueryId, config: &Configuration, subset: &Configuration, specialized: f64) -> Result<()> {
        if self.lower_bound_probe.is_none() {
            return Ok(());
        }
        let generalized = generalized_lower_bound(q, config, &self.bounds, &self.cache)?;
        let empty_cost = self.cache.empty_cost(q)?;
        if let Some(samples) = &mut self.lower_bound_probe {
            samples.push(LowerBoundSample {
                query_id: q,
                config: config.clone(),
                subset: subset.clone(),
                specialized,
                generalized,
                empty_cost,
            });
        }
        Ok(())
    }

    fn finish(
        &mut self,
        q: QueryId,
        config: &Configuration,
        kind: EvalKind,
        cost: f64,
        bounds: Option<(f64, f64, f64)>,
    ) -> EvalOutcome {
        if let Some(trace) = &mut self.trace {
            trace.push(EvalRecord {
                step: self.stats.evals,
                query_id: q,
                config: config.clone(),
                kind,
                cost,
                lower: bounds.map(|b| b.0),
                upper: bounds.map(|b| b.1),
                alpha: bounds.map(|b| b.2),
                budget_left: self.budget,
            });
        }
        EvalOutcome {
            cost,
            remaining_budget: self.budget,
            kind,
            confidence: bounds.map(|b| b.2),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{abc_workload, index};
    use crate::oracle::fixtures::one_slot_model;

    fn cfg(v: &[u32]) -> Configuration {
        v.iter().copied().map(IndexId).collect()
    }

    const Q: QueryId = QueryId(0);

    /// Three single-column indexes on a, b, c; one query over all three.
    fn setup(benefits: &[f64]) -> (Workload, CostModel) {
        let w = abc_workload(
            vec![index(0, &[0], &[], 1.0), index(1, &[1], &[], 1.0), index(2, &[2], &[], 1.0)],
            vec![[0, 1, 2].into()],
        );
        (w, one_slot_model(benefits, &[]))
    }

    #[test]
    fn budget_parsing() {
        assert_eq!("inf".parse::<Budget>().unwrap(), Budget::Unlimited);
        assert_eq!("12".parse::<Budget>().unwrap(), Budget::Finite(12));
        assert!("x".parse::<Budget>().is_err());
        assert_eq!(serde_json::to_string(&Budget::Unlimited).unwrap(), "\"inf\"");
        assert_eq!(serde_json::from_str::<Budget>("7").unwrap(), Budget::Finite(7));
    }

    #[test]
    fn rejects_bad_alpha() {
        let (w, m) = setup(&[30.0, 20.0, 10.0]);
        let cfgs = SessionConfig {
            alpha: 1.5,
            ..Default::default()
        };
        assert!(matches!(WiiSession::new(&w, &m, cfgs), Err(Error::Input(_))));
    }

    #[test]
    fn cached_then_exhausted_then_issued() {
        let (w, m) = setup(&[30.0, 20.0, 10.0]);
        let mut s = WiiSession::new(
            &w,
            &m,
            SessionConfig {
                budget: Budget::Finite(1),
                policy: SkipPolicy::Never,
                ..Default::default()
            },
        )
        .unwrap();
        s.init_bounds(&[Q], &[IndexId(0), IndexId(1), IndexId(2)]).unwrap();
        let out = s.eval_cost(Q, &cfg(&[1]), &cfg(&[])).unwrap();
        assert_eq!((out.cost, out.kind, out.remaining_budget), (80.0, EvalKind::WhatIfIssued, Budget::Finite(0)));
        let out = s.eval_cost(Q, &cfg(&[1]), &cfg(&[])).unwrap();
        assert_eq!((out.cost, out.kind, out.remaining_budget), (80.0, EvalKind::Cached, Budget::Finite(0)));
        let out = s.eval_cost(Q, &cfg(&[1, 2]), &cfg(&[1])).unwrap();
        assert_eq!((out.cost, out.kind), (80.0, EvalKind::BudgetExhausted));
        assert_eq!(s.meter().charged_calls(), 1);
        // the Ω_q cost is cached at setup (exempt)
        assert_eq!(s.setup_exempt_calls(), 2);
        assert_eq!(s.cache().omega_cost(Q), Some(70.0));
    }

    #[test]
    fn skips_when_confident() {
        // U = 80 from {1}; L = c({1}) - u(2) with u(2) = Δ({2}) = 5 → 75.
        let (w, m) = setup(&[30.0, 20.0, 5.0]);
        let mut s = WiiSession::new(
            &w,
            &m,
            SessionConfig {
                budget: Budget::Finite(10),
                alpha: 0.9,
                trace: true,
                ..Default::default()
            },
        )
        .unwrap();
        let all = [IndexId(0), IndexId(1), IndexId(2)];
        s.init_bounds(&[Q], &all).unwrap();
        s.eval_cost(Q, &cfg(&[1]), &cfg(&[])).unwrap();
        s.eval_cost(Q, &cfg(&[2]), &cfg(&[])).unwrap();
        assert_eq!(s.bounds().get(Q, IndexId(2)), Some(5.0));
        let out = s.eval_cost(Q, &cfg(&[1, 2]), &cfg(&[1])).unwrap();
        assert_eq!(out.kind, EvalKind::Skipped);
        assert_eq!(out.cost, 80.0);
        assert_eq!(out.confidence, Some(75.0 / 80.0));
        assert_eq!(out.remaining_budget, Budget::Finite(8));
        assert!(!s.cache().contains(Q, &cfg(&[1, 2])));
        let last = s.trace().unwrap().last().unwrap();
        assert_eq!((last.lower, last.upper), (Some(75.0), Some(80.0)));
    }

    #[test]
    fn mean_return_mode() {
        let (w, m) = setup(&[30.0, 20.0, 5.0]);
        let mut s = WiiSession::new(
            &w,
            &m,
            SessionConfig {
                alpha: 0.9,
                return_on_skip: ReturnOnSkip::Mean,
                ..Default::default()
            },
        )
        .unwrap();
        s.init_bounds(&[Q], &[IndexId(0), IndexId(1), IndexId(2)]).unwrap();
        s.eval_cost(Q, &cfg(&[1]), &cfg(&[])).unwrap();
        s.eval_cost(Q, &cfg(&[2]), &cfg(&[])).unwrap();
        let out = s.eval_cost(Q, &cfg(&[1, 2]), &cfg(&[1])).unwrap();
        assert_eq!(out.kind, EvalKind::Skipped);
        assert_eq!(out.cost, 77.5);
    }

    #[test]
    fn charge_setup_consumes_budget() {
        let (w, m) = setup(&[30.0, 20.0, 10.0]);
        let s = WiiSession::new(
            &w,
            &m,
            SessionConfig {
                budget: Budget::Finite(5),
                charge_setup: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(s.budget(), Budget::Finite(3));
        assert_eq!(s.meter().charged_calls(), 2);
        assert_eq!(s.setup_charged_calls(), 2);
        let too_small = SessionConfig {
            budget: Budget::Finite(0),
            charge_setup: true,
            ..Default::default()
        };
        assert!(WiiSession::new(&w, &m, too_small).is_err());
    }

    #[test]
    fn coverage_estimate_replaced_by_true_singleton() {
        let (w, m) = setup(&[30.0, 20.0, 10.0]);
        let mut s = WiiSession::new(
            &w,
            &m,
            SessionConfig {
                coverage: true,
                policy: SkipPolicy::Never,
                ..Default::default()
            },
        )
        .unwrap();
        let all = [IndexId(0), IndexId(1), IndexId(2)];
        s.init_bounds(&[Q], &all).unwrap();
        assert!(s.bounds().has_estimate(Q, IndexId(1)));
        s.eval_cost(Q, &cfg(&[1]), &cfg(&[])).unwrap();
        assert!(!s.bounds().has_estimate(Q, IndexId(1)));
        assert_eq!(s.bounds().get(Q, IndexId(1)), Some(20.0));
        s.init_bounds(&[Q], &all).unwrap();
        assert!(!s.bounds().has_estimate(Q, IndexId(1)));
        assert!(s.bounds().has_estimate(Q, IndexId(2)));
    }

    #[test]
    fn eval_log_csv_header() {
        let (w, m) = setup(&[30.0, 20.0, 10.0]);
        let mut s = WiiSession::new(
            &w,
            &m,
            SessionConfig {
                trace: true,
                ..Default::default()
            },
        )
        .unwrap();
        s.init_bounds(&[Q], &[IndexId(1)]).unwrap();
        s.eval_cost(Q, &cfg(&[1]), &cfg(&[])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval_log.csv");
        write_eval_log(s.trace().unwrap(), &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,query_id,config,kind,cost,L,U,alpha,budget_left");
        assert!(lines.next().unwrap().starts_with("1,0,1,what_if_issued,80,"));
    }
}
