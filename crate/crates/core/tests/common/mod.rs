#![allow(dead_code)]

use wii_core::costing::Budget;
use wii_core::experiment::Variant;
use wii_core::model::{Constraints, Workload};
use wii_core::oracle::{generate, CostModel, GeneratorParams};
use wii_core::search::{Algorithm, SearchOptions};

/// Reference instance family: 30 queries over 8 tables, 60 candidate indexes.
pub fn reference_params(seed: u64) -> GeneratorParams {
    GeneratorParams {
        seed,
        n_queries: 30,
        n_tables: 8,
        n_indexes: 60,
        slots_per_query: 3,
        violation_probability: 0.0,
        violation_magnitude: 0.1,
        columns_per_table: 6,
    }
}

pub fn reference(seed: u64) -> (Workload, CostModel) {
    generate(&reference_params(seed)).expect("reference instance generates")
}

/// Cardinality limit and tight budget used on the reference family.
pub const REF_K: usize = 10;
pub const TIGHT_B: u64 = 60;

pub fn options(algorithm: Algorithm, budget: Budget, k: usize, alpha: f64, variant: Variant, seed: u64) -> SearchOptions {
    let mut o = SearchOptions {
        algorithm,
        budget,
        alpha_threshold: alpha,
        seed,
        constraints: Constraints::cardinality(k),
        ..Default::default()
    };
    variant.apply(&mut o);
    o
}

/// `a ≤ b` up to `tol`.
pub fn le(a: f64, b: f64, tol: f64) -> bool {
    a <= b + tol
}
