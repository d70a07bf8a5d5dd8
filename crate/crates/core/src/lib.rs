//! Pairwise neural ranking with privileged preference scores.
//!
//! The crate provides a small feedforward scorer trained as a two-stream,
//! tied-weight pairwise ranker. Training minimises either the pairwise
//! binary cross-entropy (plain RankNet) or a blend of that loss with bounded
//! score-matching terms against privileged per-sample scores (AffRankNet+).
//!
//! Modules:
//! - [`nn`]: network, hand-written backpropagation, Adam, model files.
//! - [`loss`]: per-pair losses with analytic gradients, loss surfaces.
//! - [`dataset`]: scored samples, CSV, pair construction, group holdout.
//! - [`trainer`]: mini-batch training with early stopping, scoring.
//! - [`eval`]: correlations, paired t-test, experiment grids and reports.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod loss;
pub mod nn;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
