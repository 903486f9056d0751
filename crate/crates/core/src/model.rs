//! Workload, index and configuration types.
//!
//! Every entity is addressed by a dense integer id equal to its position in
//! the owning [`Workload`] list. Names are carried for display only.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(TableId);
id_type!(ColumnId);
id_type!(QueryId);
id_type!(
    /// Identifier of a candidate index.
    IndexId
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub id: TableId,
    pub name: String,
    pub row_count: u64,
    pub size_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub id: ColumnId,
    pub table_id: TableId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub id: IndexId,
    pub table_id: TableId,
    /// Ordered key columns; position matters for seeks.
    pub key_columns: Vec<ColumnId>,
    #[serde(default)]
    pub included_columns: BTreeSet<ColumnId>,
    pub size_mb: f64,
}

impl Index {
    /// Key columns followed by included columns.
    pub fn all_columns(&self) -> impl Iterator<Item = ColumnId> + '_ {
        self.key_columns
            .iter()
            .copied()
            .chain(self.included_columns.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: QueryId,
    pub indexable_columns: BTreeSet<ColumnId>,
    pub referenced_tables: BTreeSet<TableId>,
}

/// The tuning input: tables, the indexable column domain, queries and the
/// candidate index set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub tables: Vec<Table>,
    pub columns: Vec<Column>,
    pub queries: Vec<Query>,
    pub indexes: Vec<Index>,
}

impl Workload {
    /// Checks id density and all referential invariants.
    pub fn validate(&self) -> Result<()> {
        for (pos, t) in self.tables.iter().enumerate() {
            if t.id.index() != pos {
                return Err(Error::input(format!("table id {} at position {pos}", t.id)));
            }
            if t.row_count < 1 {
                return Err(Error::input(format!("table {} has row_count 0", t.id)));
            }
            if !(t.size_mb > 0.0) {
                return Err(Error::input(format!("table {} has non-positive size", t.id)));
            }
        }
        for (pos, c) in self.columns.iter().enumerate() {
            if c.id.index() != pos {
                return Err(Error::input(format!("column id {} at position {pos}", c.id)));
            }
            if c.table_id.index() >= self.tables.len() {
                return Err(Error::input(format!(
                    "column {} references unknown table {}",
                    c.id, c.table_id
                )));
            }
        }
        for (pos, q) in self.queries.iter().enumerate() {
            if q.id.index() != pos {
                return Err(Error::input(format!("query id {} at position {pos}", q.id)));
            }
            if q.indexable_columns.is_empty() {
                return Err(Error::input(format!("query {} has no indexable columns", q.id)));
            }
            for &t in &q.referenced_tables {
                if t.index() >= self.tables.len() {
                    return Err(Error::input(format!("query {} references unknown table {t}", q.id)));
                }
            }
            for &c in &q.indexable_columns {
                let col = self.column(c)?;
                if !q.referenced_tables.contains(&col.table_id) {
                    return Err(Error::input(format!(
                        "query {}: column {c} belongs to unreferenced table {}",
                        q.id, col.table_id
                    )));
                }
            }
        }
        for (pos, z) in self.indexes.iter().enumerate() {
            if z.id.index() != pos {
                return Err(Error::input(format!("index id {} at position {pos}", z.id)));
            }
            if z.table_id.index() >= self.tables.len() {
                return Err(Error::input(format!("index {} references unknown table", z.id)));
            }
            if z.key_columns.is_empty() {
                return Err(Error::input(format!("index {} has no key columns", z.id)));
            }
            if !(z.size_mb > 0.0) {
                return Err(Error::input(format!("index {} has non-positive size", z.id)));
            }
            let mut seen = BTreeSet::new();
            for c in z.all_columns() {
                if !seen.insert(c) {
                    return Err(Error::input(format!("index {}: column {c} repeated", z.id)));
                }
                if self.column(c)?.table_id != z.table_id {
                    return Err(Error::input(format!(
                        "index {}: column {c} is not on table {}",
                        z.id, z.table_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn column(&self, id: ColumnId) -> Result<&Column> {
        self.columns
            .get(id.index())
            .ok_or_else(|| Error::input(format!("unknown column {id}")))
    }

    pub fn table(&self, id: TableId) -> Result<&Table> {
        self.tables
            .get(id.index())
            .ok_or_else(|| Error::input(format!("unknown table {id}")))
    }

    pub fn query(&self, id: QueryId) -> Result<&Query> {
        self.queries
            .get(id.index())
            .ok_or_else(|| Error::input(format!("unknown query {id}")))
    }

    pub fn index(&self, id: IndexId) -> Result<&Index> {
        self.indexes
            .get(id.index())
            .ok_or_else(|| Error::input(format!("unknown index {id}")))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = QueryId> + '_ {
        self.queries.iter().map(|q| q.id)
    }

    pub fn index_ids(&self) -> impl Iterator<Item = IndexId> + '_ {
        self.indexes.iter().map(|z| z.id)
    }

    /// Candidate index ids of every query, indexed by query id.
    pub fn candidate_map(&self) -> Vec<Vec<IndexId>> {
        self.queries
            .iter()
            .map(|q| {
                candidate_indexes_for_query(q, &self.indexes)
                    .into_iter()
                    .map(|z| z.id)
                    .collect()
            })
            .collect()
    }

    pub fn total_table_size_mb(&self) -> f64 {
        self.tables.iter().map(|t| t.size_mb).sum()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let w: Workload = serde_json::from_str(&text)?;
        w.validate()?;
        Ok(w)
    }
}

/// A set of index ids in canonical (sorted, duplicate-free) form.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<IndexId>", into = "Vec<IndexId>")]
pub struct Configuration(Vec<IndexId>);

impl From<Vec<IndexId>> for Configuration {
    fn from(mut ids: Vec<IndexId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Configuration(ids)
    }
}

impl From<Configuration> for Vec<IndexId> {
    fn from(c: Configuration) -> Self {
        c.0
    }
}

impl FromIterator<IndexId> for Configuration {
    fn from_iter<I: IntoIterator<Item = IndexId>>(iter: I) -> Self {
        Configuration::from(iter.into_iter().collect::<Vec<_>>())
    }
}

impl Configuration {
    pub fn empty() -> Self {
        Configuration(Vec::new())
    }

    pub fn singleton(z: IndexId) -> Self {
        Configuration(vec![z])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[IndexId] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = IndexId> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, z: IndexId) -> bool {
        self.0.binary_search(&z).is_ok()
    }

    /// `self ∪ {z}`.
    pub fn with(&self, z: IndexId) -> Configuration {
        let mut ids = self.0.clone();
        if let Err(pos) = ids.binary_search(&z) {
            ids.insert(pos, z);
        }
        Configuration(ids)
    }

    pub fn without(&self, z: IndexId) -> Configuration {
        Configuration(self.0.iter().copied().filter(|&x| x != z).collect())
    }

    pub fn union(&self, other: &Configuration) -> Configuration {
        self.iter().chain(other.iter()).collect()
    }

    pub fn is_subset_of(&self, other: &Configuration) -> bool {
        if self.0.len() > other.0.len() {
            return false;
        }
        let mut it = other.0.iter();
        'outer: for x in &self.0 {
            for y in it.by_ref() {
                if y == x {
                    continue 'outer;
                }
                if y > x {
                    return false;
                }
            }
            return false;
        }
        true
    }

    /// Elements of `self` not in `other`, ascending.
    pub fn difference<'a>(&'a self, other: &'a Configuration) -> impl Iterator<Item = IndexId> + 'a {
        self.0.iter().copied().filter(move |&x| !other.contains(x))
    }

    /// Restriction to the ids in `allowed` (which must be sorted ascending).
    pub fn restrict_to(&self, allowed: &[IndexId]) -> Configuration {
        Configuration(
            self.0
                .iter()
                .copied()
                .filter(|z| allowed.binary_search(z).is_ok())
                .collect(),
        )
    }
}

impl fmt::Display for Configuration {
    /// Semicolon-joined ids; the empty configuration renders as an empty string.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, z) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{z}")?;
        }
        Ok(())
    }
}

/// Cardinality and optional storage limits on the recommended configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub cardinality_k: usize,
    pub storage_limit_mb: Option<f64>,
}

impl Constraints {
    pub fn new(cardinality_k: usize, storage_limit_mb: Option<f64>) -> Result<Self> {
        if let Some(limit) = storage_limit_mb {
            if !(limit > 0.0) {
                return Err(Error::input(format!("storage limit must be positive, got {limit}")));
            }
        }
        Ok(Constraints {
            cardinality_k,
            storage_limit_mb,
        })
    }

    pub fn cardinality(k: usize) -> Self {
        Constraints {
            cardinality_k: k,
            storage_limit_mb: None,
        }
    }

    pub fn storage_ok(&self, storage_mb: f64) -> bool {
        self.storage_limit_mb.is_none_or(|limit| storage_mb <= limit)
    }
}

/// Indexes whose key and included columns all appear among the query's
/// indexable columns, ascending by id.
pub fn candidate_indexes_for_query<'a>(q: &Query, all: &'a [Index]) -> Vec<&'a Index> {
    let mut out: Vec<&Index> = all
        .iter()
        .filter(|z| z.all_columns().all(|c| q.indexable_columns.contains(&c)))
        .collect();
    out.sort_by_key(|z| z.id);
    out
}

pub fn storage_of(config: &Configuration, workload: &Workload) -> Result<f64> {
    config
        .iter()
        .map(|z| workload.index(z).map(|idx| idx.size_mb))
        .sum()
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[u32]) -> Configuration {
        v.iter().copied().map(IndexId).collect()
    }

    #[test]
    fn candidate_requires_all_columns() {
        let all = vec![index(0, &[0], &[], 1.0), index(1, &[2], &[], 1.0), index(2, &[0], &[2], 1.0)];
        let w = abc_workload(all.clone(), vec![[0, 1].into()]);
        let got: Vec<_> = candidate_indexes_for_query(&w.queries[0], &all)
            .iter()
            .map(|z| z.id)
            .collect();
        assert_eq!(got, vec![IndexId(0)]);
        assert!(candidate_indexes_for_query(&w.queries[0], &[]).is_empty());
    }

    #[test]
    fn storage_sums_sizes() {
        let w = abc_workload(
            vec![index(0, &[0], &[], 10.0), index(1, &[1], &[], 2.5)],
            vec![[0, 1].into()],
        );
        assert_eq!(storage_of(&Configuration::empty(), &w).unwrap(), 0.0);
        assert_eq!(storage_of(&ids(&[0]), &w).unwrap(), 10.0);
        assert_eq!(storage_of(&ids(&[0, 1]), &w).unwrap(), 12.5);
        assert!(matches!(storage_of(&ids(&[7]), &w), Err(Error::Input(_))));
    }

    #[test]
    fn validate_rejects_bad_indexes() {
        let mut w = abc_workload(vec![index(0, &[0], &[0], 1.0)], vec![[0].into()]);
        assert!(w.validate().is_err());
        w.indexes = vec![index(0, &[], &[1], 1.0)];
        assert!(w.validate().is_err());
        w.indexes = vec![index(1, &[0], &[], 1.0)];
        assert!(w.validate().is_err());
        w.indexes = vec![index(0, &[0, 1], &[2], 1.0)];
        w.validate().unwrap();
    }

    #[test]
    fn configuration_set_ops() {
        let a = ids(&[3, 1]);
        assert_eq!(a.ids(), &[IndexId(1), IndexId(3)]);
        assert_eq!(a.with(IndexId(2)), ids(&[1, 2, 3]));
        assert!(ids(&[1]).is_subset_of(&a));
        assert!(!ids(&[2]).is_subset_of(&a));
        assert!(Configuration::empty().is_subset_of(&a));
        assert_eq!(a.to_string(), "1;3");
        assert_eq!(Configuration::empty().to_string(), "");
        assert_eq!(ids(&[1, 2, 3]).restrict_to(&[IndexId(2), IndexId(3)]), ids(&[2, 3]));
    }

    proptest! {
        #[test]
        fn canonical_under_permutation(mut v in proptest::collection::vec(0u32..30, 0..12)) {
            let a = ids(&v);
            v.reverse();
            let b = ids(&v);
            prop_assert_eq!(&a, &b);
            use std::hash::{BuildHasher, RandomState};
            let s = RandomState::new();
            prop_assert_eq!(s.hash_one(&a), s.hash_one(&b));
        }

        #[test]
        fn subset_matches_naive(x in proptest::collection::btree_set(0u32..12, 0..8),
                                y in proptest::collection::btree_set(0u32..12, 0..8)) {
            let cx: Configuration = x.iter().copied().map(IndexId).collect();
            let cy: Configuration = y.iter().copied().map(IndexId).collect();
            prop_assert_eq!(cx.is_subset_of(&cy), x.is_subset(&y));
        }

        #[test]
        fn candidates_satisfy_containment(
            qcols in proptest::collection::btree_set(0u32..3, 1..3),
            specs in proptest::collection::vec((0u32..3, proptest::option::of(0u32..3)), 0..6),
        ) {
            let all: Vec<Index> = specs
                .iter()
                .enumerate()
                .map(|(i, (k, inc))| {
                    let inc: Vec<u32> = inc.iter().copied().filter(|c| c != k).collect();
                    index(i as u32, &[*k], &inc, 1.0)
                })
                .collect();
            let w = abc_workload(all.clone(), vec![qcols.clone()]);
            let got = candidate_indexes_for_query(&w.queries[0], &all);
            for z in &got {
                prop_assert!(z.all_columns().all(|c| qcols.contains(&c.0)));
            }
            let expected = all.iter().filter(|z| z.all_columns().all(|c| qcols.contains(&c.0))).count();
            prop_assert_eq!(got.len(), expected);
        }
    }
}
