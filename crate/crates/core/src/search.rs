//! Budget-aware configuration enumeration on top of [`WiiSession`].
//!
//! Each query is evaluated on its projection `C ∩ I_q`: indexes outside a
//! query's candidates cannot change its cost, so no what-if call is spent on them.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::costing::{Budget, EvalRecord, ReturnOnSkip, SessionConfig, SkipPolicy, LowerBoundSample, WiiSession};
use crate::error::{Error, Result};
use crate::model::{storage_of, Configuration, Constraints, IndexId, QueryId, Workload};
use crate::oracle::{CostModel, Oracle};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    VanillaGreedy,
    TwoPhaseGreedy,
    Mcts,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::VanillaGreedy => "vanilla_greedy",
            Algorithm::TwoPhaseGreedy => "two_phase_greedy",
            Algorithm::Mcts => "mcts",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla_greedy" | "vanilla" | "greedy" => Ok(Algorithm::VanillaGreedy),
            "two_phase_greedy" | "two_phase" => Ok(Algorithm::TwoPhaseGreedy),
            "mcts" => Ok(Algorithm::Mcts),
            _ => Err(Error::input(format!("unknown algorithm `{s}`"))),
        }
    }
}

/// Label stored in reports produced by the MCTS skeleton, whose selection and
/// reward rules are local choices rather than a published policy.
pub const MCTS_POLICY_LABEL: &str = "epsilon_greedy_placeholder";

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub algorithm: Algorithm,
    pub budget: Budget,
    pub alpha_threshold: f64,
    pub wii_enabled: bool,
    pub coverage_enabled: bool,
    pub skip_policy: SkipPolicy,
    pub return_on_skip: ReturnOnSkip,
    pub epsilon: f64,
    pub seed: u64,
    pub constraints: Constraints,
    pub charge_setup: bool,
    pub oracle_delay: Option<Duration>,
    pub trace: bool,
    /// Record specialized vs. generalized lower bounds on every greedy evaluation.
    pub lower_bound_probe: bool,
    pub mcts_max_iters: usize,
    /// MCTS stops after this many consecutive iterations without a charged call.
    pub mcts_stall_limit: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            algorithm: Algorithm::TwoPhaseGreedy,
            budget: Budget::Unlimited,
            alpha_threshold: 0.9,
            wii_enabled: true,
            coverage_enabled: false,
            skip_policy: SkipPolicy::Confidence,
            return_on_skip: ReturnOnSkip::Upper,
            epsilon: 0.2,
            seed: 1,
            constraints: Constraints::cardinality(10),
            charge_setup: false,
            oracle_delay: None,
            trace: false,
            lower_bound_probe: false,
            mcts_max_iters: 10_000,
            mcts_stall_limit: 200,
        }
    }
}

impl SearchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.coverage_enabled && !self.wii_enabled {
            return Err(Error::input("coverage requires wii to be enabled"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::input(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        self.session_config().validate()
    }

    fn session_config(&self) -> SessionConfig {
        SessionConfig {
            budget: self.budget,
            alpha: self.alpha_threshold,
            policy: if self.wii_enabled { self.skip_policy } else { SkipPolicy::Never },
            return_on_skip: self.return_on_skip,
            charge_setup: self.charge_setup,
            coverage: self.coverage_enabled,
            seed: self.seed,
            trace: self.trace,
            log_calls: false,
            oracle_delay: self.oracle_delay,
            charge_calls: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub algorithm: Algorithm,
    pub final_configuration: Configuration,
    /// True workload cost of the final configuration (exempt evaluation).
    pub final_cost: f64,
    /// Workload cost of the final configuration as seen by the search.
    pub estimated_cost: f64,
    pub empty_cost: f64,
    pub improvement_pct: f64,
    pub budget_initial: Budget,
    pub budget_final: Budget,
    pub charged_calls: u64,
    pub charged_setup_calls: u64,
    pub exempt_setup_calls: u64,
    pub evals: u64,
    pub issued_calls: u64,
    pub skipped_calls: u64,
    pub cached_hits: u64,
    pub exhausted_evals: u64,
    pub bound_evals: u64,
    pub phase1_ms: f64,
    pub phase2_ms: f64,
    pub total_ms: f64,
    pub bound_time_ms: f64,
    pub mean_bound_us: Option<f64>,
    pub mean_whatif_us: Option<f64>,
    /// Set for MCTS runs, whose policy is a placeholder.
    pub mcts_policy: Option<String>,
}

impl TuningReport {
    /// Zeroes every wall-clock field so two reports can be compared for determinism.
    pub fn without_timings(mut self) -> Self {
        self.phase1_ms = 0.0;
        self.phase2_ms = 0.0;
        self.total_ms = 0.0;
        self.bound_time_ms = 0.0;
        self.mean_bound_us = None;
        self.mean_whatif_us = None;
        self
    }
}

/// A finished tuning run: the report plus optional diagnostics.
#[derive(Debug, Clone)]
pub struct TuningOutcome {
    pub report: TuningReport,
    pub trace: Option<Vec<EvalRecord>>,
    pub lower_bound_probe: Option<Vec<LowerBoundSample>>,
}

/// Greedy result: the configuration, its estimated workload cost, and the
/// index accepted at each step with the workload cost after it.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyRun {
    pub configuration: Configuration,
    pub cost: f64,
    pub steps: Vec<(IndexId, f64)>,
}

/// Greedy enumeration over `indexes` for `queries`, up to `K` indexes.
///
/// Each round adds the index whose extension has the smallest estimated
/// workload cost; the search stops when no extension strictly improves on the
/// incumbent. MCI bounds are reset on entry.
pub fn greedy_search(
    session: &mut WiiSession<'_>,
    queries: &[QueryId],
    indexes: &[IndexId],
    constraints: &Constraints,
) -> Result<GreedyRun> {
    let mut remaining: Vec<IndexId> = indexes.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    session.init_bounds(queries, &remaining)?;

    let mut users: HashMap<IndexId, Vec<usize>> = HashMap::new();
    for (pos, &q) in queries.iter().enumerate() {
        for &z in session.candidates(q) {
            users.entry(z).or_default().push(pos);
        }
    }

    // per-query cost of the incumbent as scored when it was accepted
    let mut incumbent_costs = queries
        .iter()
        .map(|&q| session.cache().empty_cost(q))
        .collect::<Result<Vec<_>>>()?;
    let mut best = Configuration::empty();
    let mut best_cost: f64 = incumbent_costs.iter().sum();
    let mut steps = Vec::new();
    let workload = session.workload();

    while !remaining.is_empty() && best.len() < constraints.cardinality_k {
        let mut round: Option<(IndexId, f64, Vec<f64>)> = None;
        for &z in &remaining {
            let extended = best.with(z);
            if !constraints.storage_ok(storage_of(&extended, workload)?) {
                continue;
            }
            let mut costs = incumbent_costs.clone();
            for &pos in users.get(&z).map(Vec::as_slice).unwrap_or(&[]) {
                let q = queries[pos];
                let config = session.relevant(q, &extended);
                let subset = session.relevant(q, &best);
                costs[pos] = session.eval_cost(q, &config, &subset)?.cost;
            }
            let total: f64 = costs.iter().sum();
            let improves = match &round {
                Some((_, c, _)) => total < *c,
                None => total < best_cost,
            };
            if improves {
                round = Some((z, total, costs));
            }
        }
        let Some((z, total, costs)) = round else { break };
        best = best.with(z);
        best_cost = total;
        incumbent_costs = costs;
        remaining.retain(|&x| x != z);
        steps.push((z, total));
    }
    Ok(GreedyRun {
        configuration: best,
        cost: best_cost,
        steps,
    })
}

/// Phase 1 runs greedy per query over its candidates; phase 2 runs greedy on
/// the workload over the union of the per-query winners. Returns the run and
/// the phase-1 union.
pub fn two_phase_greedy(
    session: &mut WiiSession<'_>,
    queries: &[QueryId],
    indexes: &[IndexId],
    constraints: &Constraints,
) -> Result<(GreedyRun, Vec<IndexId>, [Duration; 2])> {
    let started = Instant::now();
    let mut union = BTreeSet::new();
    for &q in queries {
        let iq: Vec<IndexId> = session
            .candidates(q)
            .iter()
            .copied()
            .filter(|z| indexes.contains(z))
            .collect();
        let run = greedy_search(session, &[q], &iq, constraints)?;
        union.extend(run.configuration.iter());
    }
    let phase1 = started.elapsed();
    let union: Vec<IndexId> = union.into_iter().collect();
    let started = Instant::now();
    let run = greedy_search(session, queries, &union, constraints)?;
    Ok((run, union, [phase1, started.elapsed()]))
}

#[derive(Debug, Clone, Copy, Default)]
struct Reward {
    sum: f64,
    count: u64,
}

impl Reward {
    fn mean(self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// ε-greedy exploration over query-level configurations, then a final greedy
/// pass over everything learned with the remaining budget.
pub fn mcts_search(
    session: &mut WiiSession<'_>,
    queries: &[QueryId],
    indexes: &[IndexId],
    opts: &SearchOptions,
) -> Result<(GreedyRun, [Duration; 2])> {
    let started = Instant::now();
    let constraints = &opts.constraints;
    let k = constraints.cardinality_k;
    let workload = session.workload();
    let mut rng = rng::stream(opts.seed, Stream::Mcts);
    let pool: Vec<Vec<IndexId>> = queries
        .iter()
        .map(|&q| session.candidates(q).iter().copied().filter(|z| indexes.contains(z)).collect())
        .collect();
    let mut incumbents: Vec<(Configuration, f64)> = queries
        .iter()
        .map(|&q| Ok((Configuration::empty(), session.cache().empty_cost(q)?)))
        .collect::<Result<_>>()?;
    let mut rewards: HashMap<(QueryId, IndexId), Reward> = HashMap::new();
    session.init_bounds(queries, indexes)?;

    let (mut iters, mut stall) = (0usize, 0usize);
    while k > 0
        && !queries.is_empty()
        && !session.budget().is_exhausted()
        && iters < opts.mcts_max_iters
        && stall < opts.mcts_stall_limit
    {
        iters += 1;
        stall += 1;
        let pos = rng.random_range(0..queries.len());
        let q = queries[pos];
        let (incumbent, incumbent_cost) = &incumbents[pos];
        let open: Vec<IndexId> = pool[pos].iter().copied().filter(|z| !incumbent.contains(*z)).collect();
        if open.is_empty() {
            continue;
        }
        let z = if rng.random::<f64>() < opts.epsilon {
            open[rng.random_range(0..open.len())]
        } else {
            let mut best = open[0];
            let mut best_mean = rewards.get(&(q, best)).copied().unwrap_or_default().mean();
            for &x in &open[1..] {
                let m = rewards.get(&(q, x)).copied().unwrap_or_default().mean();
                if m > best_mean {
                    best = x;
                    best_mean = m;
                }
            }
            best
        };

        let mut proposal = incumbent.with(z);
        if proposal.len() > k {
            let weakest = incumbent
                .iter()
                .min_by(|a, b| {
                    let ra = rewards.get(&(q, *a)).copied().unwrap_or_default().mean();
                    let rb = rewards.get(&(q, *b)).copied().unwrap_or_default().mean();
                    ra.total_cmp(&rb).then(b.cmp(a))
                })
                .expect("incumbent is nonempty when full");
            proposal = proposal.without(weakest);
        }
        if !constraints.storage_ok(storage_of(&proposal, workload)?) {
            proposal = Configuration::singleton(z);
            if !constraints.storage_ok(storage_of(&proposal, workload)?) {
                continue;
            }
        }

        let charged_before = session.meter().charged_calls();
        let cost = session.eval_cost(q, &proposal, &Configuration::empty())?.cost;
        if session.meter().charged_calls() > charged_before {
            stall = 0;
        }
        let empty = session.cache().empty_cost(q)?;
        let reward = if empty > 0.0 { (empty - cost) / empty } else { 0.0 };
        for x in proposal.iter() {
            let r = rewards.entry((q, x)).or_default();
            r.sum += reward;
            r.count += 1;
        }
        if cost < *incumbent_cost {
            incumbents[pos] = (proposal, cost);
        }
    }
    log::debug!("mcts: {iters} iterations, budget left {}", session.budget());
    let explore = started.elapsed();
    let started = Instant::now();
    let run = greedy_search(session, queries, indexes, constraints)?;
    Ok((run, [explore, started.elapsed()]))
}

/// True workload cost `Σ_q c(q, C)` using exempt calls on `oracle`.
pub fn workload_cost(workload: &Workload, oracle: &mut Oracle<'_>, config: &Configuration) -> Result<f64> {
    let mut total = 0.0;
    for q in workload.query_ids() {
        total += oracle.what_if(q, config, false)?;
    }
    Ok(total)
}

/// Percentage improvement `(1 - c(W,C) / c(W,∅)) · 100` over true costs.
pub fn compute_improvement(workload: &Workload, config: &Configuration, model: &CostModel) -> Result<f64> {
    let mut oracle = Oracle::new(model);
    let empty = workload_cost(workload, &mut oracle, &Configuration::empty())?;
    let cost = workload_cost(workload, &mut oracle, config)?;
    improvement_pct(empty, cost)
}

pub fn improvement_pct(empty_cost: f64, cost: f64) -> Result<f64> {
    if !(empty_cost > 0.0) {
        return Err(Error::state(format!("workload cost without indexes is {empty_cost}")));
    }
    Ok((1.0 - cost / empty_cost) * 100.0)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Runs the selected algorithm over all queries and all indexes of `workload`.
pub fn tune(workload: &Workload, model: &CostModel, opts: &SearchOptions) -> Result<TuningOutcome> {
    opts.validate()?;
    let started = Instant::now();
    let mut session = WiiSession::new(workload, model, opts.session_config())?;
    session.record_lower_bound_probe(opts.lower_bound_probe);
    let queries: Vec<QueryId> = workload.query_ids().collect();
    let indexes: Vec<IndexId> = workload.index_ids().collect();

    let (run, phases) = match opts.algorithm {
        Algorithm::VanillaGreedy => {
            let t = Instant::now();
            let run = greedy_search(&mut session, &queries, &indexes, &opts.constraints)?;
            (run, [t.elapsed(), Duration::ZERO])
        }
        Algorithm::TwoPhaseGreedy => {
            let (run, _, phases) = two_phase_greedy(&mut session, &queries, &indexes, &opts.constraints)?;
            (run, phases)
        }
        Algorithm::Mcts => mcts_search(&mut session, &queries, &indexes, opts)?,
    };
    let total = started.elapsed();

    let mut exempt = Oracle::new(model);
    let empty_cost = workload_cost(workload, &mut exempt, &Configuration::empty())?;
    let final_cost = workload_cost(workload, &mut exempt, &run.configuration)?;
    let stats = *session.stats();
    let report = TuningReport {
        algorithm: opts.algorithm,
        improvement_pct: improvement_pct(empty_cost, final_cost)?,
        final_configuration: run.configuration,
        final_cost,
        estimated_cost: run.cost,
        empty_cost,
        budget_initial: session.initial_budget(),
        budget_final: session.budget(),
        charged_calls: session.meter().charged_calls(),
        charged_setup_calls: session.setup_charged_calls(),
        exempt_setup_calls: session.setup_exempt_calls(),
        evals: stats.evals,
        issued_calls: stats.issued,
        skipped_calls: stats.skipped,
        cached_hits: stats.cached,
        exhausted_evals: stats.exhausted,
        bound_evals: stats.bound_evals,
        phase1_ms: ms(phases[0]),
        phase2_ms: ms(phases[1]),
        total_ms: ms(total),
        bound_time_ms: ms(stats.bound_time),
        mean_bound_us: stats.mean_bound_time().map(|d| d.as_secs_f64() * 1e6),
        mean_whatif_us: stats.mean_whatif_time().map(|d| d.as_secs_f64() * 1e6),
        mcts_policy: (opts.algorithm == Algorithm::Mcts).then(|| MCTS_POLICY_LABEL.to_string()),
    };
    Ok(TuningOutcome {
        report,
        trace: session.trace().map(<[_]>::to_vec),
        lower_bound_probe: session.lower_bound_samples().map(<[_]>::to_vec),
    })
}
