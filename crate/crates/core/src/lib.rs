//! Relation-wise rank ensembles for link prediction.
//!
//! Base models' candidate scores are converted to ranks and combined with one
//! nonnegative weight column per relation. Weights are found by black-box
//! search of validation MRR, either per relation ([`dsc::relens_dsc`]),
//! jointly ([`dsc::relens_basic`]), or shared by all relations
//! ([`ensemble::simple_ens_search`]).

pub mod curve;
pub mod dsc;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod metrics;
pub mod search;
pub mod stacking;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
