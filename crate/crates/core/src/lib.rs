//! Off-policy evaluation of top-n ranking policies with DCG-style metrics.
//!
//! The pieces:
//! - [`domain`]: catalogs, qualities, logged datasets and their JSONL format;
//! - [`bias_models`]: position-based view probabilities;
//! - [`policies`]: two-stage (candidate generator + ranker) policies;
//! - [`simulator`]: a position-based click simulator with exact and Monte
//!   Carlo ground truth, exposure computation and day-by-day drift;
//! - [`estimators`]: inverse-propensity DCG estimators with clipping and
//!   nDCG / pooled-nDCG normalisations;
//! - [`stats`]: correlation, Welch comparisons and sensitivity summaries;
//! - [`consistency`]: DCG vs nDCG order consistency tools.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default); see [`exec::Execution`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bias_models;
pub mod consistency;
pub mod domain;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod policies;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
