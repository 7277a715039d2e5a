//! Conservative sample reweighting for offline policy post-training.
//!
//! The engine scores each training sample by how well its recorded action
//! chunk predicts the observed future, turns that score into a bounded
//! importance weight, and feeds the weight into a self-normalized action
//! loss. Everything runs on plain `f64` slices: a small dense-matrix MLP
//! stack, a counter-based seeded RNG, hand-derived backward passes, and a
//! finite-difference oracle that keeps the gradients honest.
//!
//! Layout:
//! - [`numerics`]: matrices, MLPs, softmax/normalization kernels, RNG,
//!   gradient checking, parameter snapshots.
//! - [`tokenizer`]: recurrent belief-token summarizer with entropy and
//!   diversity regularizers.
//! - [`pool`]: EMA teacher targets, FIFO negative queue, virtual ranks,
//!   hard-negative mining.
//! - [`scorer`]: identification head, posterior over candidates, ranking
//!   loss, batch statistics.
//! - [`reweight`]: score-to-weight map, self-normalization, KL budget.
//! - [`controller`]: feedback rule that adapts temperature, advantage
//!   scale, and hard-negative ratio from identification statistics.
//! - [`theory`]: independent Monte Carlo checks of the three structural
//!   claims behind the weighting rule.
//! - [`bench`]: a 2-D synthetic benchmark (world, corruptions, toy policy,
//!   training loop, evaluation, paired comparisons).
//! - [`config`] / [`metrics`] / [`cli`]: run configuration, artifact
//!   writers, and the command-line entry points.

pub mod bench;
pub mod cli;
pub mod config;
pub mod controller;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod pool;
pub mod reweight;
pub mod scorer;
pub mod theory;
pub mod tokenizer;

pub use error::{PtrError, Result};
