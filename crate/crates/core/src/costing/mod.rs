//! What-if call interception: the what-if cache, derived cost, MCI upper
//! bounds, the cost lower bound and the confidence gate.
//!
//! Everything here assumes the cost function is monotone (adding indexes never
//! increases cost) and, for the bounds to be sound, submodular (the marginal
//! improvement of an index never grows as the configuration grows).

mod session;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{Configuration, IndexId, QueryId};

pub use session::{
    Budget, EvalKind, EvalOutcome, EvalRecord, EvalStats, ReturnOnSkip, SessionConfig, SkipPolicy,
    LowerBoundSample, WiiSession, EVAL_LOG_HEADER, write_eval_log,
};

#[derive(Debug, Clone, Default)]
struct QueryCache {
    entries: HashMap<Configuration, f64>,
    omega: Option<(Configuration, f64)>,
}

/// Known true what-if costs, per query.
#[derive(Debug, Clone)]
pub struct WhatIfCache {
    queries: Vec<QueryCache>,
}

impl WhatIfCache {
    pub fn new(n_queries: usize) -> Self {
        WhatIfCache {
            queries: vec![QueryCache::default(); n_queries],
        }
    }

    /// Records a true cost. Re-inserting a different value for the same pair is an error.
    pub fn insert(&mut self, q: QueryId, config: Configuration, cost: f64) -> Result<()> {
        let slot = self
            .queries
            .get_mut(q.index())
            .ok_or_else(|| Error::input(format!("unknown query {q}")))?;
        match slot.entries.get(&config) {
            Some(&old) if old != cost => Err(Error::state(format!(
                "query {q}: cost of {{{config}}} already cached as {old}, refusing {cost}"
            ))),
            Some(_) => Ok(()),
            None => {
                slot.entries.insert(config, cost);
                Ok(())
            }
        }
    }

    /// Records `c(q, Ω_q)` together with `Ω_q`. The value comes from a call
    /// under all candidates, so it feeds the bounds but is not a subset entry
    /// for derived costs.
    pub fn set_optimal(&mut self, q: QueryId, omega_q: Configuration, cost: f64) -> Result<()> {
        let slot = self
            .queries
            .get_mut(q.index())
            .ok_or_else(|| Error::input(format!("unknown query {q}")))?;
        slot.omega = Some((omega_q, cost));
        Ok(())
    }

    pub fn get(&self, q: QueryId, config: &Configuration) -> Option<f64> {
        self.queries.get(q.index())?.entries.get(config).copied()
    }

    pub fn contains(&self, q: QueryId, config: &Configuration) -> bool {
        self.get(q, config).is_some()
    }

    pub fn empty_cost(&self, q: QueryId) -> Result<f64> {
        self.get(q, &Configuration::empty())
            .ok_or_else(|| Error::state(format!("query {q}: c(q, ∅) not cached")))
    }

    pub fn omega_cost(&self, q: QueryId) -> Option<f64> {
        self.queries.get(q.index())?.omega.as_ref().map(|(_, c)| *c)
    }

    pub fn omega_config(&self, q: QueryId) -> Option<&Configuration> {
        self.queries.get(q.index())?.omega.as_ref().map(|(c, _)| c)
    }

    pub fn entries(&self, q: QueryId) -> impl Iterator<Item = (&Configuration, f64)> + '_ {
        self.queries
            .get(q.index())
            .into_iter()
            .flat_map(|s| s.entries.iter().map(|(c, v)| (c, *v)))
    }

    pub fn len(&self, q: QueryId) -> usize {
        self.queries.get(q.index()).map_or(0, |s| s.entries.len())
    }

    pub fn n_queries(&self) -> usize {
        self.queries.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct MciEntry {
    bound: f64,
    /// Coverage-based estimate, used only while the singleton cost is unknown.
    estimate: Option<f64>,
}

/// Upper bounds `u(q, z)` on the marginal cost improvement of index `z` for query `q`.
#[derive(Debug, Clone)]
pub struct MciBounds {
    queries: Vec<HashMap<IndexId, MciEntry>>,
}

impl MciBounds {
    pub fn new(n_queries: usize) -> Self {
        MciBounds {
            queries: vec![HashMap::new(); n_queries],
        }
    }

    /// Effective bound: the smaller of the sound bound and any active estimate.
    pub fn get(&self, q: QueryId, z: IndexId) -> Option<f64> {
        let e = self.queries.get(q.index())?.get(&z)?;
        Some(e.estimate.map_or(e.bound, |est| est.min(e.bound)))
    }

    /// The bound derived from true costs only.
    pub fn sound_bound(&self, q: QueryId, z: IndexId) -> Option<f64> {
        Some(self.queries.get(q.index())?.get(&z)?.bound)
    }

    pub fn set(&mut self, q: QueryId, z: IndexId, bound: f64) {
        self.queries[q.index()].insert(
            z,
            MciEntry {
                bound: bound.max(0.0),
                estimate: None,
            },
        );
    }

    pub fn set_estimate(&mut self, q: QueryId, z: IndexId, estimate: f64) {
        if let Some(e) = self.queries[q.index()].get_mut(&z) {
            e.estimate = Some(estimate.max(0.0));
        }
    }

    pub fn clear_estimate(&mut self, q: QueryId, z: IndexId) {
        if let Some(e) = self.queries[q.index()].get_mut(&z) {
            e.estimate = None;
        }
    }

    pub fn has_estimate(&self, q: QueryId, z: IndexId) -> bool {
        self.queries
            .get(q.index())
            .and_then(|m| m.get(&z))
            .is_some_and(|e| e.estimate.is_some())
    }

    fn tighten(&mut self, q: QueryId, z: IndexId, value: f64) {
        if let Some(e) = self.queries[q.index()].get_mut(&z) {
            e.bound = e.bound.min(value).max(0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.queries.iter().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Initial MCI bounds for every query and each of its candidates in `indexes`:
/// `c(q,∅) - c(q,Ω_q)` when `c(q,Ω_q)` is known, otherwise `c(q,∅)`.
///
/// `candidates[q]` must be the (ascending) candidate list of query `q`.
pub fn init_mci_bounds(
    queries: &[QueryId],
    indexes: &[IndexId],
    candidates: &[Vec<IndexId>],
    cache: &WhatIfCache,
) -> Result<MciBounds> {
    let mut bounds = MciBounds::new(cache.n_queries());
    for &q in queries {
        let empty = cache.empty_cost(q)?;
        let u = match cache.omega_cost(q) {
            Some(omega) => empty - omega,
            None => empty,
        };
        for &z in &candidates[q.index()] {
            if indexes.contains(&z) {
                bounds.set(q, z, u);
            }
        }
    }
    Ok(bounds)
}

/// `U(q, C)`: the smallest known cost over cached subsets of `C`.
pub fn derived_cost(q: QueryId, config: &Configuration, cache: &WhatIfCache) -> Result<f64> {
    let mut best = cache.empty_cost(q)?;
    for (s, cost) in cache.entries(q) {
        if cost < best && s.is_subset_of(config) {
            best = cost;
        }
    }
    Ok(best)
}

fn mci_or_conservative(q: QueryId, x: IndexId, bounds: &MciBounds, empty: f64) -> f64 {
    bounds.get(q, x).unwrap_or_else(|| {
        log::debug!("query {q}: no MCI bound for non-candidate index {x}, using c(q, ∅)");
        empty
    })
}

fn bound_from(
    q: QueryId,
    config: &Configuration,
    subset: &Configuration,
    subset_cost: f64,
    bounds: &MciBounds,
    empty: f64,
) -> f64 {
    let slack: f64 = config
        .difference(subset)
        .map(|x| mci_or_conservative(q, x, bounds, empty))
        .sum();
    subset_cost - slack
}

/// `max{0, c(q,Ω_q), c(q,S) - Σ_{x ∈ C-S} u(q,x)}` for a cached `S ⊆ C`.
pub fn lower_bound(
    q: QueryId,
    config: &Configuration,
    subset: &Configuration,
    bounds: &MciBounds,
    cache: &WhatIfCache,
) -> Result<f64> {
    if !subset.is_subset_of(config) {
        return Err(Error::input(format!("{{{subset}}} is not a subset of {{{config}}}")));
    }
    let subset_cost = cache
        .get(q, subset)
        .ok_or_else(|| Error::state(format!("query {q}: c(q, {{{subset}}}) not cached")))?;
    let empty = cache.empty_cost(q)?;
    let floor = cache.omega_cost(q).unwrap_or(0.0).max(0.0);
    Ok(bound_from(q, config, subset, subset_cost, bounds, empty).max(floor))
}

/// Lower bound maximized over every cached strict subset of `C`.
pub fn generalized_lower_bound(
    q: QueryId,
    config: &Configuration,
    bounds: &MciBounds,
    cache: &WhatIfCache,
) -> Result<f64> {
    let empty = cache.empty_cost(q)?;
    let mut best = cache.omega_cost(q).unwrap_or(0.0).max(0.0);
    for (s, cost) in cache.entries(q) {
        if s.len() < config.len() && s.is_subset_of(config) {
            best = best.max(bound_from(q, config, s, cost, bounds, empty));
        }
    }
    Ok(best)
}

/// `L / U`, or 1 when `U = 0`.
pub fn confidence(lower: f64, upper: f64) -> Result<f64> {
    if lower < 0.0 || upper < 0.0 || lower.is_nan() || upper.is_nan() {
        return Err(Error::input(format!("confidence needs nonnegative bounds, got L={lower}, U={upper}")));
    }
    if upper == 0.0 {
        return Ok(1.0);
    }
    Ok((lower / upper).min(1.0))
}

/// `u(q,x) ← max(0, min(u(q,x), c(q,S) - c(q,C)))` for every `x ∈ C - S`.
pub fn update_mci_bounds(
    q: QueryId,
    config: &Configuration,
    subset: &Configuration,
    cache: &WhatIfCache,
    bounds: &mut MciBounds,
) -> Result<()> {
    let c_config = cache
        .get(q, config)
        .ok_or_else(|| Error::state(format!("query {q}: c(q, {{{config}}}) not cached")))?;
    let c_subset = cache
        .get(q, subset)
        .ok_or_else(|| Error::state(format!("query {q}: c(q, {{{subset}}}) not cached")))?;
    if !subset.is_subset_of(config) {
        return Err(Error::input(format!("{{{subset}}} is not a subset of {{{config}}}")));
    }
    let diff = c_subset - c_config;
    for x in config.difference(subset) {
        bounds.tighten(q, x, diff);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const Q: QueryId = QueryId(0);

    fn cfg(v: &[u32]) -> Configuration {
        v.iter().copied().map(IndexId).collect()
    }

    fn cache_with(entries: &[(&[u32], f64)]) -> WhatIfCache {
        let mut c = WhatIfCache::new(1);
        for (ids, cost) in entries {
            c.insert(Q, cfg(ids), *cost).unwrap();
        }
        c
    }

    fn bounds_with(us: &[(u32, f64)]) -> MciBounds {
        let mut b = MciBounds::new(1);
        for &(z, u) in us {
            b.set(Q, IndexId(z), u);
        }
        b
    }

    #[test]
    fn cache_refuses_conflicting_writes() {
        let mut c = cache_with(&[(&[], 100.0)]);
        c.insert(Q, cfg(&[]), 100.0).unwrap();
        assert!(matches!(c.insert(Q, cfg(&[]), 99.0), Err(Error::State(_))));
    }

    #[test]
    fn init_bounds_cases() {
        let mut cache = cache_with(&[(&[], 100.0)]);
        let cands = vec![vec![IndexId(0), IndexId(1)]];
        let b = init_mci_bounds(&[Q], &[IndexId(0), IndexId(1), IndexId(2)], &cands, &cache).unwrap();
        assert_eq!(b.get(Q, IndexId(0)), Some(100.0));
        assert_eq!(b.get(Q, IndexId(2)), None);
        cache.set_optimal(Q, cfg(&[1]), 40.0).unwrap();
        let b = init_mci_bounds(&[Q], &[IndexId(0), IndexId(1)], &cands, &cache).unwrap();
        assert_eq!(b.get(Q, IndexId(0)), Some(60.0));
        assert_eq!(b.get(Q, IndexId(1)), Some(60.0));
        let empty = WhatIfCache::new(1);
        assert!(matches!(init_mci_bounds(&[Q], &[], &cands, &empty), Err(Error::State(_))));
    }

    #[test]
    fn derived_cost_examples() {
        let c = cache_with(&[(&[], 100.0)]);
        assert_eq!(derived_cost(Q, &cfg(&[1]), &c).unwrap(), 100.0);
        let c = cache_with(&[(&[], 100.0), (&[1], 80.0)]);
        assert_eq!(derived_cost(Q, &cfg(&[1, 2]), &c).unwrap(), 80.0);
        let c = cache_with(&[(&[], 100.0), (&[1], 80.0), (&[2], 75.0)]);
        assert_eq!(derived_cost(Q, &cfg(&[1, 2]), &c).unwrap(), 75.0);
        assert_eq!(derived_cost(Q, &cfg(&[3]), &c).unwrap(), 100.0);
    }

    #[test]
    fn lower_bound_examples() {
        let mut c = cache_with(&[(&[], 100.0)]);
        let b = bounds_with(&[(1, 30.0), (2, 20.0)]);
        assert_eq!(lower_bound(Q, &cfg(&[1, 2]), &cfg(&[]), &b, &c).unwrap(), 50.0);
        c.set_optimal(Q, cfg(&[1, 2, 3]), 60.0).unwrap();
        assert_eq!(lower_bound(Q, &cfg(&[1, 2]), &cfg(&[]), &b, &c).unwrap(), 60.0);
        let c = cache_with(&[(&[], 100.0)]);
        let b = bounds_with(&[(1, 70.0), (2, 50.0)]);
        assert_eq!(lower_bound(Q, &cfg(&[1, 2]), &cfg(&[]), &b, &c).unwrap(), 0.0);
        assert!(matches!(lower_bound(Q, &cfg(&[1, 2]), &cfg(&[1]), &b, &c), Err(Error::State(_))));
    }

    #[test]
    fn lower_bound_missing_u_is_conservative() {
        let c = cache_with(&[(&[], 100.0)]);
        let b = bounds_with(&[(1, 10.0)]);
        assert_eq!(lower_bound(Q, &cfg(&[1, 9]), &cfg(&[]), &b, &c).unwrap(), 0.0);
    }

    #[test]
    fn generalized_lower_bound_examples() {
        let c = cache_with(&[(&[], 100.0)]);
        let b = bounds_with(&[(1, 30.0), (2, 5.0)]);
        let c_z = cfg(&[1, 2]);
        assert_eq!(
            generalized_lower_bound(Q, &c_z, &b, &c).unwrap(),
            lower_bound(Q, &c_z, &cfg(&[]), &b, &c).unwrap()
        );
        let c = cache_with(&[(&[], 100.0), (&[1], 80.0)]);
        assert_eq!(generalized_lower_bound(Q, &c_z, &b, &c).unwrap(), 75.0);
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence(50.0, 80.0).unwrap(), 0.625);
        assert_eq!(confidence(0.0, 10.0).unwrap(), 0.0);
        assert_eq!(confidence(10.0, 10.0).unwrap(), 1.0);
        assert_eq!(confidence(0.0, 0.0).unwrap(), 1.0);
        assert!(matches!(confidence(-1.0, 3.0), Err(Error::Input(_))));
    }

    #[test]
    fn update_examples() {
        let c = cache_with(&[(&[1], 80.0), (&[1, 2], 70.0)]);
        let mut b = bounds_with(&[(2, 30.0)]);
        update_mci_bounds(Q, &cfg(&[1, 2]), &cfg(&[1]), &c, &mut b).unwrap();
        assert_eq!(b.get(Q, IndexId(2)), Some(10.0));
        let mut b = bounds_with(&[(2, 5.0)]);
        update_mci_bounds(Q, &cfg(&[1, 2]), &cfg(&[1]), &c, &mut b).unwrap();
        assert_eq!(b.get(Q, IndexId(2)), Some(5.0));
        let c = cache_with(&[(&[1], 80.0), (&[1, 2], 83.0)]);
        let mut b = bounds_with(&[(2, 5.0)]);
        update_mci_bounds(Q, &cfg(&[1, 2]), &cfg(&[1]), &c, &mut b).unwrap();
        assert_eq!(b.get(Q, IndexId(2)), Some(0.0));
        assert!(update_mci_bounds(Q, &cfg(&[1, 3]), &cfg(&[1]), &c, &mut b).is_err());
    }

    #[test]
    fn estimates_only_tighten_effective_value() {
        let mut b = bounds_with(&[(1, 50.0)]);
        b.set_estimate(Q, IndexId(1), 20.0);
        assert_eq!(b.get(Q, IndexId(1)), Some(20.0));
        assert_eq!(b.sound_bound(Q, IndexId(1)), Some(50.0));
        b.clear_estimate(Q, IndexId(1));
        assert_eq!(b.get(Q, IndexId(1)), Some(50.0));
    }

    proptest! {
        #[test]
        fn derived_cost_monotone(
            entries in proptest::collection::vec((proptest::collection::btree_set(0u32..6, 1..4), 1.0f64..100.0), 0..12),
            small in proptest::collection::btree_set(0u32..6, 0..3),
            extra in proptest::collection::btree_set(0u32..6, 0..3),
        ) {
            let mut cache = cache_with(&[(&[], 100.0)]);
            let mut before = Vec::new();
            let c1: Configuration = small.iter().copied().map(IndexId).collect();
            let c2 = c1.union(&extra.iter().copied().map(IndexId).collect());
            for (ids, cost) in entries {
                let c: Configuration = ids.into_iter().map(IndexId).collect();
                if cache.contains(Q, &c) { continue; }
                before.push(derived_cost(Q, &c2, &cache).unwrap());
                cache.insert(Q, c, cost).unwrap();
                let now = derived_cost(Q, &c2, &cache).unwrap();
                prop_assert!(now <= *before.last().unwrap());
            }
            prop_assert!(derived_cost(Q, &c2, &cache).unwrap() <= derived_cost(Q, &c1, &cache).unwrap());
        }

        #[test]
        fn updates_never_raise_bounds(diffs in proptest::collection::vec(-20.0f64..60.0, 1..20)) {
            let mut b = bounds_with(&[(1, 50.0)]);
            let mut prev = 50.0;
            for (i, d) in diffs.into_iter().enumerate() {
                let c = cache_with(&[(&[], 100.0), (&[1], 100.0 - d)]);
                update_mci_bounds(Q, &cfg(&[1]), &cfg(&[]), &c, &mut b).unwrap();
                let now = b.sound_bound(Q, IndexId(1)).unwrap();
                prop_assert!(now <= prev && now >= 0.0, "step {}", i);
                prev = now;
            }
        }
    }
}
