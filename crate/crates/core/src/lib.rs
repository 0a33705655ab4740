//! Neural Simpletron: a three-layer generative classifier whose activations
//! are exact posteriors of a hierarchical Poisson mixture and whose local
//! Hebbian learning rules share their fixed points with batch EM.
//!
//! - [`model`]: weights, normalization, inference and learning rules
//! - [`em`]: independent batch EM for the same mixture, used as an oracle
//! - [`train`]: the online training loop for the ff, r, ff+ and r+ variants
//! - [`data`]: IDX and bag-of-words readers, tf-idf, label splits, synthetic data
//! - [`eval`]: test error, run statistics, field statistics and field labeling

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod em;
pub mod error;
pub mod eval;
pub mod model;
pub mod train;

pub use error::{Error, Result};
pub use model::{
    InferenceMode, LabelPrior, ModelConfig, Observations, Posteriors, Sample, Weights,
};
