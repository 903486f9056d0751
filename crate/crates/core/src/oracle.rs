//! Synthetic what-if cost oracle.
//!
//! A query's cost under a configuration is its base cost minus, for every
//! plan slot, the best benefit offered by an index of the configuration, minus
//! the bonus of every interacting index pair fully contained in the
//! configuration. Slot maxima make the cost monotone and submodular; pair
//! bonuses keep it monotone but break submodularity, the way an
//! index-intersection plan does.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    candidate_indexes_for_query, storage_of, Column, ColumnId, Configuration, Constraints, Index,
    IndexId, Query, QueryId, Table, TableId, Workload,
};
use crate::par::{self, ExecMode};
use crate::rng::{self, Stream};

/// Upper limit on total achievable benefit as a fraction of base cost.
pub const BENEFIT_CAP: f64 = 0.95;

/// Largest candidate set `brute_force_best` will enumerate.
pub const BRUTE_FORCE_MAX_INDEXES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benefit {
    pub index: IndexId,
    pub benefit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    /// Sorted by index id.
    pub benefits: Vec<Benefit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBonus {
    pub a: IndexId,
    pub b: IndexId,
    pub bonus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCost {
    pub query_id: QueryId,
    pub base_cost: f64,
    pub slots: Vec<Slot>,
    #[serde(default)]
    pub pairs: Vec<PairBonus>,
}

impl QueryCost {
    /// Slot-maxima sum plus every pair bonus.
    pub fn max_total_benefit(&self) -> f64 {
        let slots: f64 = self
            .slots
            .iter()
            .map(|s| s.benefits.iter().map(|b| b.benefit).fold(0.0, f64::max))
            .sum();
        slots + self.pairs.iter().map(|p| p.bonus).sum::<f64>()
    }

    fn cost(&self, config: &Configuration) -> f64 {
        let mut benefit = 0.0;
        for slot in &self.slots {
            let mut best = 0.0f64;
            for b in &slot.benefits {
                if b.benefit > best && config.contains(b.index) {
                    best = b.benefit;
                }
            }
            benefit += best;
        }
        for p in &self.pairs {
            if config.contains(p.a) && config.contains(p.b) {
                benefit += p.bonus;
            }
        }
        self.base_cost - benefit
    }

    /// Every index that carries any benefit or bonus for this query.
    fn touched_indexes(&self) -> BTreeSet<IndexId> {
        let mut out = BTreeSet::new();
        for s in &self.slots {
            out.extend(s.benefits.iter().filter(|b| b.benefit > 0.0).map(|b| b.index));
        }
        for p in &self.pairs {
            if p.bonus > 0.0 {
                out.insert(p.a);
                out.insert(p.b);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub n_indexes: usize,
    pub queries: Vec<QueryCost>,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        for (pos, qc) in self.queries.iter().enumerate() {
            if qc.query_id.index() != pos {
                return Err(Error::input(format!("cost model query {} at position {pos}", qc.query_id)));
            }
            if !(qc.base_cost > 0.0) {
                return Err(Error::input(format!("query {} base cost must be positive", qc.query_id)));
            }
            let ids = qc
                .slots
                .iter()
                .flat_map(|s| s.benefits.iter().map(|b| (b.index, b.benefit)))
                .chain(qc.pairs.iter().flat_map(|p| [(p.a, p.bonus), (p.b, p.bonus)]));
            for (z, v) in ids {
                if z.index() >= self.n_indexes {
                    return Err(Error::input(format!("query {}: unknown index {z}", qc.query_id)));
                }
                if !(v >= 0.0) {
                    return Err(Error::input(format!("query {}: negative benefit", qc.query_id)));
                }
            }
            if qc.max_total_benefit() > BENEFIT_CAP * qc.base_cost {
                return Err(Error::input(format!(
                    "query {}: total benefit exceeds {BENEFIT_CAP} of base cost",
                    qc.query_id
                )));
            }
        }
        Ok(())
    }

    fn query(&self, q: QueryId) -> Result<&QueryCost> {
        self.queries
            .get(q.index())
            .ok_or_else(|| Error::input(format!("unknown query {q}")))
    }

    fn check_config(&self, config: &Configuration) -> Result<()> {
        match config.ids().last() {
            Some(z) if z.index() >= self.n_indexes => Err(Error::input(format!("unknown index {z}"))),
            _ => Ok(()),
        }
    }

    /// Unmetered cost evaluation; the metered path is [`Oracle::what_if`].
    pub fn cost(&self, q: QueryId, config: &Configuration) -> Result<f64> {
        self.check_config(config)?;
        Ok(self.query(q)?.cost(config))
    }

    pub fn base_cost(&self, q: QueryId) -> Result<f64> {
        Ok(self.query(q)?.base_cost)
    }

    pub fn all_indexes(&self) -> Configuration {
        (0..self.n_indexes as u32).map(IndexId).collect()
    }

    /// Indexes used by the optimal plan of `q` under all candidates.
    ///
    /// An index belongs to the set when removing it from the full candidate
    /// set strictly raises the cost. Slots whose maximum is shared by several
    /// indexes additionally contribute their smallest-id maximizer, so that
    /// `c(q, Ω) = c(q, Ω_q)` holds even under ties.
    pub fn optimal_plan_indexes(&self, q: QueryId) -> Result<Configuration> {
        let qc = self.query(q)?;
        let omega = self.all_indexes();
        let full = qc.cost(&omega);
        let mut chosen: BTreeSet<IndexId> = qc
            .touched_indexes()
            .into_iter()
            .filter(|&z| qc.cost(&omega.without(z)) - full > 0.0)
            .collect();
        for slot in &qc.slots {
            let best = slot.benefits.iter().map(|b| b.benefit).fold(0.0, f64::max);
            if best <= 0.0 {
                continue;
            }
            let covered = slot
                .benefits
                .iter()
                .any(|b| b.benefit == best && chosen.contains(&b.index));
            if !covered {
                let z = slot.benefits.iter().filter(|b| b.benefit == best).map(|b| b.index).min();
                chosen.extend(z);
            }
        }
        Ok(chosen.into_iter().collect())
    }

    pub fn n_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn violation_pair_count(&self) -> usize {
        self.queries.iter().map(|q| q.pairs.len()).sum()
    }

    /// Bonus of the pair `{a, b}` for `q`, 0 when the pair does not interact.
    pub fn pair_bonus(&self, q: QueryId, a: IndexId, b: IndexId) -> Result<f64> {
        Ok(self
            .query(q)?
            .pairs
            .iter()
            .filter(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .map(|p| p.bonus)
            .sum())
    }

    /// Slot of `z` in the plan of `q`, if `z` benefits `q` at all.
    pub fn slot_of(&self, q: QueryId, z: IndexId) -> Result<Option<usize>> {
        Ok(self
            .query(q)?
            .slots
            .iter()
            .position(|s| s.benefits.iter().any(|b| b.index == z)))
    }

    /// Whether the generator may attach a bonus to `{a, b}` for `q`: both
    /// indexes benefit `q` through different slots.
    pub fn pair_eligible(&self, q: QueryId, a: IndexId, b: IndexId) -> Result<bool> {
        Ok(match (self.slot_of(q, a)?, self.slot_of(q, b)?) {
            (Some(sa), Some(sb)) => sa != sb,
            _ => false,
        })
    }

    /// Number of eligible pairs over all queries.
    pub fn eligible_pair_count(&self) -> usize {
        self.queries
            .iter()
            .map(|qc| {
                let sizes: Vec<usize> = qc.slots.iter().map(|s| s.benefits.len()).collect();
                let total: usize = sizes.iter().sum();
                let same: usize = sizes.iter().map(|n| n * n.saturating_sub(1) / 2).sum();
                total * total.saturating_sub(1) / 2 - same
            })
            .sum()
    }

    /// Fraction of eligible pairs that carry a bonus.
    pub fn realized_pair_density(&self) -> f64 {
        let eligible = self.eligible_pair_count();
        if eligible == 0 {
            0.0
        } else {
            self.violation_pair_count() as f64 / eligible as f64
        }
    }
}

/// Parameters of the synthetic workload/cost-model generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub seed: u64,
    pub n_queries: usize,
    pub n_tables: usize,
    pub n_indexes: usize,
    pub slots_per_query: usize,
    pub violation_probability: f64,
    /// Pair bonus as a fraction of the query's base cost (before capping).
    pub violation_magnitude: f64,
    #[serde(default = "default_columns_per_table")]
    pub columns_per_table: usize,
}

fn default_columns_per_table() -> usize {
    6
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            seed: 1,
            n_queries: 20,
            n_tables: 6,
            n_indexes: 40,
            slots_per_query: 3,
            violation_probability: 0.0,
            violation_magnitude: 0.1,
            columns_per_table: default_columns_per_table(),
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_queries < 1 {
            return Err(Error::input("n_queries must be at least 1"));
        }
        if self.n_indexes < 1 {
            return Err(Error::input("n_indexes must be at least 1"));
        }
        if self.n_tables < 1 || self.slots_per_query < 1 || self.columns_per_table < 1 {
            return Err(Error::input("n_tables, slots_per_query and columns_per_table must be positive"));
        }
        if !(0.0..=1.0).contains(&self.violation_probability) {
            return Err(Error::input("violation_probability must lie in [0, 1]"));
        }
        if !(self.violation_magnitude >= 0.0) {
            return Err(Error::input("violation_magnitude must be nonnegative"));
        }
        Ok(())
    }
}

/// Builds a random workload and a matching cost model. Deterministic in `params.seed`.
pub fn generate(params: &GeneratorParams) -> Result<(Workload, CostModel)> {
    params.validate()?;
    let mut rng = rng::stream(params.seed, Stream::Generator);
    let cpt = params.columns_per_table;

    let tables: Vec<Table> = (0..params.n_tables)
        .map(|t| {
            let rows = 2f64.powf(rng.random_range(10.0..22.0)).round() as u64;
            let row_bytes: f64 = rng.random_range(40.0..200.0);
            Table {
                id: TableId(t as u32),
                name: format!("t{t}"),
                row_count: rows,
                size_mb: (rows as f64 * row_bytes / 1e6).max(0.01),
            }
        })
        .collect();
    let columns: Vec<Column> = (0..params.n_tables * cpt)
        .map(|c| Column {
            id: ColumnId(c as u32),
            table_id: TableId((c / cpt) as u32),
            name: format!("t{}_c{}", c / cpt, c % cpt),
        })
        .collect();
    let table_columns = |t: TableId| (0..cpt).map(move |j| ColumnId((t.index() * cpt + j) as u32));

    let queries: Vec<Query> = (0..params.n_queries)
        .map(|q| {
            let n_ref = rng.random_range(1..=params.n_tables.min(3));
            let mut refs: Vec<TableId> = rand::seq::index::sample(&mut rng, params.n_tables, n_ref)
                .into_iter()
                .map(|t| TableId(t as u32))
                .collect();
            refs.sort();
            let mut cols = BTreeSet::new();
            for &t in &refs {
                let mut pool: Vec<ColumnId> = table_columns(t).collect();
                pool.shuffle(&mut rng);
                let n = rng.random_range(1..=cpt.min(4));
                cols.extend(pool.into_iter().take(n));
            }
            Query {
                id: QueryId(q as u32),
                indexable_columns: cols,
                referenced_tables: refs.into_iter().collect(),
            }
        })
        .collect();

    let mut indexes: Vec<Index> = Vec::with_capacity(params.n_indexes);
    let mut signatures = BTreeSet::new();
    for i in 0..params.n_indexes {
        let mut attempt = 0;
        let index = loop {
            attempt += 1;
            let q0 = queries.choose(&mut rng).expect("n_queries >= 1");
            let refs: Vec<TableId> = q0.referenced_tables.iter().copied().collect();
            let t = *refs.choose(&mut rng).expect("queries reference a table");
            let mut pool: Vec<ColumnId> = q0
                .indexable_columns
                .iter()
                .copied()
                .filter(|c| c.index() / cpt == t.index())
                .collect();
            pool.shuffle(&mut rng);
            let n_key = rng.random_range(1..=pool.len().min(3));
            let key: Vec<ColumnId> = pool[..n_key].to_vec();
            let mut included = BTreeSet::new();
            if pool.len() > n_key && rng.random::<f64>() < 0.3 {
                included.insert(pool[n_key]);
            }
            let sig = (t, key.clone(), included.clone());
            if signatures.insert(sig) || attempt >= 64 {
                let width = (key.len() + included.len()) as f64 / cpt as f64;
                let size = (tables[t.index()].size_mb * width * 0.6).max(0.01);
                break Index {
                    id: IndexId(i as u32),
                    table_id: t,
                    key_columns: key,
                    included_columns: included,
                    size_mb: size,
                };
            }
        };
        indexes.push(index);
    }

    let workload = Workload {
        tables,
        columns,
        queries,
        indexes,
    };

    let mut model_queries = Vec::with_capacity(params.n_queries);
    for q in &workload.queries {
        let refs: Vec<TableId> = q.referenced_tables.iter().copied().collect();
        let log_rows: Vec<f64> = refs
            .iter()
            .map(|t| (workload.tables[t.index()].row_count as f64).log2())
            .collect();
        let base_cost = 10.0 * log_rows.iter().sum::<f64>() * rng.random_range(0.5..2.0);
        let n_slots = refs.len().min(params.slots_per_query).max(1);
        let shares: Vec<f64> = log_rows.iter().map(|lr| lr * rng.random_range(0.5..1.5)).collect();
        let share_total: f64 = shares.iter().sum();
        let indexability: f64 = rng.random_range(0.4..0.9);
        let importance: Vec<(ColumnId, f64)> = q
            .indexable_columns
            .iter()
            .map(|&c| (c, rng.random_range(0.2..1.0)))
            .collect();
        let imp = |c: ColumnId| {
            importance
                .iter()
                .find(|(k, _)| *k == c)
                .map(|(_, v)| *v)
                .unwrap_or(0.0)
        };

        let mut slots: Vec<Slot> = (0..n_slots).map(|_| Slot { benefits: Vec::new() }).collect();
        let mut slot_of = Vec::new();
        for z in candidate_indexes_for_query(q, &workload.indexes) {
            let t_pos = refs.iter().position(|&t| t == z.table_id).expect("candidate on referenced table");
            let mut on_table: Vec<f64> = q
                .indexable_columns
                .iter()
                .filter(|c| c.index() / cpt == z.table_id.index())
                .map(|&c| imp(c))
                .collect();
            on_table.sort_by(|a, b| b.total_cmp(a));
            let best_quality: f64 = on_table
                .iter()
                .enumerate()
                .map(|(j, v)| v / 2f64.powi(j as i32))
                .sum();
            let j_keys = z.key_columns.len() as i32;
            let quality: f64 = z
                .key_columns
                .iter()
                .enumerate()
                .map(|(j, &c)| imp(c) / 2f64.powi(j as i32))
                .sum::<f64>()
                + z.included_columns.iter().map(|&c| imp(c) / 2f64.powi(j_keys)).sum::<f64>();
            let ratio = (quality / best_quality).min(1.0);
            let benefit = base_cost * indexability * (shares[t_pos] / share_total) * ratio
                * rng.random_range(0.8..1.2);
            let slot = t_pos % n_slots;
            slots[slot].benefits.push(Benefit { index: z.id, benefit });
            slot_of.push((z.id, slot));
        }

        let mut pairs = Vec::new();
        for (i, &(a, sa)) in slot_of.iter().enumerate() {
            for &(b, sb) in &slot_of[i + 1..] {
                let draw: f64 = rng.random();
                if sa != sb && draw < params.violation_probability {
                    pairs.push(PairBonus {
                        a,
                        b,
                        bonus: params.violation_magnitude * base_cost,
                    });
                }
            }
        }

        let mut qc = QueryCost {
            query_id: q.id,
            base_cost,
            slots,
            pairs,
        };
        let total = qc.max_total_benefit();
        if total > BENEFIT_CAP * base_cost {
            let scale = BENEFIT_CAP * base_cost / total * (1.0 - 1e-12);
            for s in &mut qc.slots {
                for b in &mut s.benefits {
                    b.benefit *= scale;
                }
            }
            for p in &mut qc.pairs {
                p.bonus *= scale;
            }
        }
        model_queries.push(qc);
    }

    let model = CostModel {
        n_indexes: params.n_indexes,
        queries: model_queries,
    };
    model.validate()?;
    Ok((workload, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub query: QueryId,
    pub config: Configuration,
    pub cost: f64,
    pub charged: bool,
}

/// Call accounting for one tuning session.
#[derive(Debug, Clone, Default)]
pub struct OracleMeter {
    charged: u64,
    exempt: u64,
    log: Option<Vec<CallRecord>>,
}

impl OracleMeter {
    pub fn charged_calls(&self) -> u64 {
        self.charged
    }

    pub fn exempt_calls(&self) -> u64 {
        self.exempt
    }

    /// `None` when logging is disabled.
    pub fn log(&self) -> Option<&[CallRecord]> {
        self.log.as_deref()
    }

    fn record(&mut self, rec: CallRecord) {
        if rec.charged {
            self.charged += 1;
        } else {
            self.exempt += 1;
        }
        if let Some(log) = &mut self.log {
            log.push(rec);
        }
    }
}

/// Metered access to a [`CostModel`].
#[derive(Debug, Clone)]
pub struct Oracle<'m> {
    model: &'m CostModel,
    meter: OracleMeter,
    delay: Option<Duration>,
}

impl<'m> Oracle<'m> {
    pub fn new(model: &'m CostModel) -> Self {
        Oracle {
            model,
            meter: OracleMeter::default(),
            delay: None,
        }
    }

    /// Keep a per-call log in the meter.
    pub fn with_log(mut self) -> Self {
        self.meter.log = Some(Vec::new());
        self
    }

    /// Sleep for `delay` on every call, emulating optimizer latency.
    pub fn with_delay(mut self, delay: Option<Duration>) -> Self {
        self.delay = delay;
        self
    }

    pub fn model(&self) -> &'m CostModel {
        self.model
    }

    pub fn meter(&self) -> &OracleMeter {
        &self.meter
    }

    pub fn what_if(&mut self, q: QueryId, config: &Configuration, charge: bool) -> Result<f64> {
        let cost = self.model.cost(q, config)?;
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        self.meter.record(CallRecord {
            query: q,
            config: config.clone(),
            cost,
            charged: charge,
        });
        Ok(cost)
    }

    /// Accounts for `n` exempt evaluations made directly against the model.
    pub(crate) fn add_exempt(&mut self, n: u64) {
        self.meter.exempt += n;
    }
}

/// Exhaustive minimum of the workload cost over all feasible configurations.
///
/// Ties go to the lexicographically smallest id list. Evaluations are counted
/// as exempt calls on `oracle`.
pub fn brute_force_best(
    workload: &Workload,
    oracle: &mut Oracle<'_>,
    constraints: &Constraints,
    mode: ExecMode,
) -> Result<(Configuration, f64)> {
    let n = workload.indexes.len();
    if n > BRUTE_FORCE_MAX_INDEXES {
        return Err(Error::input(format!(
            "brute force limited to {BRUTE_FORCE_MAX_INDEXES} indexes, workload has {n}"
        )));
    }
    let model = oracle.model();
    let k = constraints.cardinality_k;
    let masks: Vec<u32> = (0u32..(1u32 << n)).filter(|m| m.count_ones() as usize <= k).collect();
    let evaluated = par::map(mode, &masks, |&mask| -> Result<Option<(Configuration, f64)>> {
        let config: Configuration = (0..n as u32).filter(|i| mask & (1 << i) != 0).map(IndexId).collect();
        if !constraints.storage_ok(storage_of(&config, workload)?) {
            return Ok(None);
        }
        let mut total = 0.0;
        for q in workload.query_ids() {
            total += model.cost(q, &config)?;
        }
        Ok(Some((config, total)))
    });
    let mut best: Option<(Configuration, f64)> = None;
    let mut calls = 0u64;
    for item in evaluated {
        let Some((config, total)) = item? else { continue };
        calls += workload.queries.len() as u64;
        let better = match &best {
            None => true,
            Some((bc, bt)) => total < *bt || (total == *bt && config < *bc),
        };
        if better {
            best = Some((config, total));
        }
    }
    oracle.add_exempt(calls);
    best.ok_or_else(|| Error::state("no feasible configuration"))
}

/// On-disk document: the workload plus, optionally, its cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadFile {
    #[serde(flatten)]
    pub workload: Workload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_model: Option<CostModel>,
}

impl WorkloadFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WorkloadFile = serde_json::from_str(text)?;
        file.workload.validate()?;
        if let Some(model) = &file.cost_model {
            model.validate()?;
            if model.n_queries() != file.workload.queries.len()
                || model.n_indexes != file.workload.indexes.len()
            {
                return Err(Error::input("cost model does not match workload dimensions"));
            }
        }
        Ok(file)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
