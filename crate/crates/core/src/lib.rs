//! Budget-aware index tuning with what-if call interception.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod costing;
pub mod coverage;
pub mod error;
pub mod experiment;
pub mod model;
pub mod oracle;
pub mod par;
pub mod rng;
pub mod search;
pub mod validate;

pub use error::{Error, Result};
