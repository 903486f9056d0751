//! Coverage-based estimation of singleton what-if costs.
//!
//! Indexes, configurations and queries are embedded as weighted one-hot
//! vectors over the workload's indexable columns. The coverage of index `z`
//! on query `q` is estimated as the length of `z`'s projection onto the
//! direction of `Ω_q`, relative to `Ω_q`'s own length, after both have been
//! reweighted by the query vector.

use serde::{Deserialize, Serialize};

use crate::costing::WhatIfCache;
use crate::error::{Error, Result};
use crate::model::{
    candidate_indexes_for_query, ColumnId, Configuration, Index, IndexId, Query, QueryId, Workload,
};

/// Ascending list of every indexable column referenced by some query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureDomain {
    columns: Vec<ColumnId>,
}

impl FeatureDomain {
    pub fn new(mut columns: Vec<ColumnId>) -> Self {
        columns.sort_unstable();
        columns.dedup();
        FeatureDomain { columns }
    }

    pub fn from_workload(w: &Workload) -> Self {
        Self::new(w.queries.iter().flat_map(|q| q.indexable_columns.iter().copied()).collect())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn position(&self, c: ColumnId) -> Option<usize> {
        self.columns.binary_search(&c).ok()
    }

    pub fn columns(&self) -> &[ColumnId] {
        &self.columns
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros(len: usize) -> Self {
        FeatureVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// Element-wise (Hadamard) product.
    pub fn hadamard(&self, other: &FeatureVector) -> FeatureVector {
        FeatureVector(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect())
    }
}

/// The `j`-th key column (1-based) weighs `1/2^(j-1)`; included columns weigh
/// `1/2^J` with `J` the number of key columns.
pub fn index_vector(z: &Index, domain: &FeatureDomain) -> Result<FeatureVector> {
    let mut v = FeatureVector::zeros(domain.len());
    let pos = |c: ColumnId| {
        domain
            .position(c)
            .ok_or_else(|| Error::input(format!("index {}: column {c} outside the feature domain", z.id)))
    };
    for (j, &c) in z.key_columns.iter().enumerate() {
        v.0[pos(c)?] = 0.5f64.powi(j as i32);
    }
    let included_weight = 0.5f64.powi(z.key_columns.len() as i32);
    for &c in &z.included_columns {
        v.0[pos(c)?] = included_weight;
    }
    Ok(v)
}

/// Element-wise maximum; the empty list yields the zero vector of length `len`.
pub fn config_vector(vectors: &[FeatureVector], len: usize) -> FeatureVector {
    let mut out = FeatureVector::zeros(len);
    for v in vectors {
        for (o, x) in out.0.iter_mut().zip(&v.0) {
            *o = o.max(*x);
        }
    }
    out
}

/// Weight `log2(1 + rows) * (1 + n_cand)` per indexable column of `q`, where
/// `n_cand` counts the candidate indexes of `q` containing the column; the
/// vector is scaled to unit length.
pub fn query_vector(q: &Query, domain: &FeatureDomain, w: &Workload) -> Result<FeatureVector> {
    let candidates = candidate_indexes_for_query(q, &w.indexes);
    let mut v = FeatureVector::zeros(domain.len());
    for &c in &q.indexable_columns {
        let Some(pos) = domain.position(c) else { continue };
        let rows = w.table(w.column(c)?.table_id)?.row_count as f64;
        let n_cand = candidates.iter().filter(|z| z.all_columns().any(|x| x == c)).count();
        v.0[pos] = query_column_weight(rows, n_cand);
    }
    let norm = v.norm_sq().sqrt();
    if norm > 0.0 {
        v.0.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(v)
}

pub fn query_column_weight(rows: f64, n_cand: usize) -> f64 {
    (1.0 + rows).log2() * (1 + n_cand) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Estimated,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageEstimate {
    /// Estimated coverage, clamped to `[0, 1]`.
    pub rho_hat: f64,
    pub provenance: Provenance,
    /// Whether the raw similarity fell outside `[0, 1]`.
    pub clamped: bool,
}

/// `⟨z̃, Ω̃⟩ / |Ω̃|²` with `z̃ = z ⊙ q`, `Ω̃ = Ω ⊙ q`, clamped to `[0, 1]`.
/// A zero `Ω̃` gives coverage 0.
pub fn coverage_similarity(z: &FeatureVector, omega: &FeatureVector, q: &FeatureVector) -> CoverageEstimate {
    let z_img = z.hadamard(q);
    let omega_img = omega.hadamard(q);
    let denom = omega_img.norm_sq();
    let raw = if denom > 0.0 { z_img.dot(&omega_img) / denom } else { 0.0 };
    let rho_hat = raw.clamp(0.0, 1.0);
    CoverageEstimate {
        rho_hat,
        provenance: Provenance::Estimated,
        clamped: rho_hat != raw,
    }
}

/// Singleton cost recovered from coverage:
/// `(1 - ρ̂)·c(q,∅) + ρ̂·c(q,Ω_q)`, or the cached true cost when known.
pub fn estimated_singleton_cost(
    q: QueryId,
    z: IndexId,
    cache: &WhatIfCache,
    rho_hat: f64,
) -> Result<(f64, Provenance)> {
    if let Some(c) = cache.get(q, &Configuration::singleton(z)) {
        return Ok((c, Provenance::Exact));
    }
    let empty = cache.empty_cost(q)?;
    let omega = cache
        .omega_cost(q)
        .ok_or_else(|| Error::state(format!("query {q}: c(q, Ω_q) unavailable")))?;
    Ok(((1.0 - rho_hat) * empty + rho_hat * omega, Provenance::Estimated))
}

/// Precomputed vectors for every query and index of a workload.
#[derive(Debug, Clone)]
pub struct CoverageEstimator {
    domain: FeatureDomain,
    query_vectors: Vec<FeatureVector>,
    index_vectors: Vec<Option<FeatureVector>>,
}

impl CoverageEstimator {
    pub fn new(w: &Workload) -> Result<Self> {
        let domain = FeatureDomain::from_workload(w);
        let query_vectors = w
            .queries
            .iter()
            .map(|q| query_vector(q, &domain, w))
            .collect::<Result<Vec<_>>>()?;
        // Indexes with columns outside the domain can never be candidates.
        let index_vectors = w.indexes.iter().map(|z| index_vector(z, &domain).ok()).collect();
        Ok(CoverageEstimator {
            domain,
            query_vectors,
            index_vectors,
        })
    }

    pub fn domain(&self) -> &FeatureDomain {
        &self.domain
    }

    pub fn query_vector(&self, q: QueryId) -> &FeatureVector {
        &self.query_vectors[q.index()]
    }

    pub fn index_vector(&self, z: IndexId) -> Result<&FeatureVector> {
        self.index_vectors
            .get(z.index())
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::input(format!("index {z} has no feature vector")))
    }

    pub fn config_vector(&self, config: &Configuration) -> Result<FeatureVector> {
        let vs = config
            .iter()
            .map(|z| self.index_vector(z).cloned())
            .collect::<Result<Vec<_>>>()?;
        Ok(config_vector(&vs, self.domain.len()))
    }

    pub fn estimate(&self, q: QueryId, z: IndexId, omega_q: &Configuration) -> Result<CoverageEstimate> {
        let qv = self
            .query_vectors
            .get(q.index())
            .ok_or_else(|| Error::input(format!("unknown query {q}")))?;
        Ok(coverage_similarity(self.index_vector(z)?, &self.config_vector(omega_q)?, qv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{abc_workload, index};
    use proptest::prelude::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector(v.to_vec())
    }

    fn abc_domain() -> FeatureDomain {
        FeatureDomain::new(vec![ColumnId(0), ColumnId(1), ColumnId(2)])
    }

    #[test]
    fn index_vector_weights() {
        let d = abc_domain();
        assert_eq!(index_vector(&index(0, &[1, 0], &[], 1.0), &d).unwrap(), fv(&[0.5, 1.0, 0.0]));
        assert_eq!(index_vector(&index(0, &[1, 0], &[2], 1.0), &d).unwrap(), fv(&[0.5, 1.0, 0.25]));
        let narrow = FeatureDomain::new(vec![ColumnId(0)]);
        assert!(matches!(index_vector(&index(0, &[1], &[], 1.0), &narrow), Err(Error::Input(_))));
    }

    #[test]
    fn key_weights_halve_by_position() {
        let d = FeatureDomain::new((0..6).map(ColumnId).collect());
        let mut z = index(0, &[5, 3, 1, 0], &[], 1.0);
        z.table_id = crate::model::TableId(0);
        let v = index_vector(&z, &d).unwrap();
        let ws: Vec<f64> = z.key_columns.iter().map(|c| v.0[d.position(*c).unwrap()]).collect();
        for pair in ws.windows(2) {
            assert_eq!(pair[1], pair[0] / 2.0);
        }
    }

    #[test]
    fn config_vector_is_elementwise_max() {
        let a = fv(&[1.0, 0.5, 0.0]);
        let b = fv(&[0.25, 1.0, 0.0]);
        assert_eq!(config_vector(&[a.clone(), b], 3), fv(&[1.0, 1.0, 0.0]));
        assert_eq!(config_vector(std::slice::from_ref(&a), 3), a);
        assert_eq!(config_vector(&[a.clone(), FeatureVector::zeros(3)], 3), a);
        assert_eq!(config_vector(&[], 3), FeatureVector::zeros(3));
    }

    #[test]
    fn query_vector_normalizes() {
        let w = abc_workload(vec![], vec![[1].into(), [0, 1].into()]);
        let d = FeatureDomain::from_workload(&w);
        assert_eq!(query_vector(&w.queries[0], &d, &w).unwrap(), fv(&[0.0, 1.0]));
        let v = query_vector(&w.queries[1], &d, &w).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((v.0[0] - s).abs() < 1e-15 && (v.0[1] - s).abs() < 1e-15);
    }

    #[test]
    fn query_weight_formula() {
        // log2(1025) * 4 and log2(3) * 1
        assert!((query_column_weight(1024.0, 3) - 40.005_632_777_571_24).abs() < 1e-9);
        assert!((query_column_weight(2.0, 0) - 1.584_962_5).abs() < 1e-6);
    }

    #[test]
    fn similarity_examples() {
        let one = fv(&[1.0, 1.0]);
        assert_eq!(coverage_similarity(&fv(&[1.0, 0.0]), &one, &one).rho_hat, 0.5);
        assert_eq!(coverage_similarity(&one, &one, &one).rho_hat, 1.0);
        let c = coverage_similarity(&fv(&[3.0, 0.0]), &one, &one);
        assert_eq!(c.rho_hat, 1.0);
        assert!(c.clamped);
        assert_eq!(coverage_similarity(&one, &FeatureVector::zeros(2), &one).rho_hat, 0.0);
    }

    #[test]
    fn singleton_cost_recovery() {
        let mut cache = WhatIfCache::new(1);
        cache.insert(QueryId(0), Configuration::empty(), 100.0).unwrap();
        assert!(estimated_singleton_cost(QueryId(0), IndexId(0), &cache, 0.5).is_err());
        cache
            .set_optimal(QueryId(0), Configuration::singleton(IndexId(3)), 60.0)
            .unwrap();
        let est = |c: &WhatIfCache, r| estimated_singleton_cost(QueryId(0), IndexId(0), c, r).unwrap();
        assert_eq!(est(&cache, 0.5), (80.0, Provenance::Estimated));
        assert_eq!(est(&cache, 0.0), (100.0, Provenance::Estimated));
        assert_eq!(est(&cache, 1.0), (60.0, Provenance::Estimated));
        cache.insert(QueryId(0), Configuration::singleton(IndexId(0)), 90.0).unwrap();
        assert_eq!(est(&cache, 0.5), (90.0, Provenance::Exact));
    }

    fn arb_vec(n: usize) -> impl Strategy<Value = FeatureVector> {
        proptest::collection::vec(0.0f64..2.0, n).prop_map(FeatureVector)
    }

    proptest! {
        #[test]
        fn config_vector_semilattice(a in arb_vec(5), b in arb_vec(5), c in arb_vec(5)) {
            let m = |xs: &[FeatureVector]| config_vector(xs, 5);
            prop_assert_eq!(m(&[a.clone(), a.clone()]), a.clone());
            prop_assert_eq!(m(&[a.clone(), b.clone()]), m(&[b.clone(), a.clone()]));
            prop_assert_eq!(m(&[m(&[a.clone(), b.clone()]), c.clone()]), m(&[a.clone(), m(&[b.clone(), c.clone()])]));
        }

        #[test]
        fn similarity_in_unit_interval(z in arb_vec(4), o in arb_vec(4), q in arb_vec(4)) {
            let r = coverage_similarity(&z, &o, &q).rho_hat;
            prop_assert!((0.0..=1.0).contains(&r));
            let self_sim = coverage_similarity(&o, &o, &q);
            if o.hadamard(&q).norm_sq() > 0.0 {
                prop_assert!((self_sim.rho_hat - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn estimate_within_bracket(rho in 0.0f64..=1.0, empty in 1.0f64..1000.0, frac in 0.05f64..1.0) {
            let mut cache = WhatIfCache::new(1);
            cache.insert(QueryId(0), Configuration::empty(), empty).unwrap();
            let omega = empty * frac;
            cache.set_optimal(QueryId(0), Configuration::singleton(IndexId(9)), omega).unwrap();
            let (c, _) = estimated_singleton_cost(QueryId(0), IndexId(0), &cache, rho).unwrap();
            prop_assert!(c >= omega * (1.0 - 1e-12) && c <= empty * (1.0 + 1e-12));
        }
    }
}
