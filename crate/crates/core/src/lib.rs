//! Virtual pulse reconstruction for free-electron lasers.
//!
//! Lasing-on and lasing-off electron phase spaces can never be measured for
//! the same shot. This crate predicts the lasing-off electron temporal power
//! profile from non-invasive machine parameters with a small perceptron, so
//! the photon pulse profile of every shot follows by subtracting the measured
//! lasing-on profile from the prediction.
//!
//! Modules follow the pipeline:
//!
//! - [`preprocess`]: phase images to aligned, cropped power profiles
//! - [`data`]: shot types, seeded splits, input standardization
//! - [`mlp`] and [`training`]: the network and its full-batch training loop
//! - [`evaluation`]: per-shot errors against mean and neighbor baselines,
//!   Wilcoxon signed-rank tests with Bonferroni correction
//! - [`reconstruct`]: photon power by subtraction and the latency benchmark
//! - [`synthetic`]: datasets with known ground truth
//! - [`io`] and [`config`]: file formats and run configuration
//! - [`pipeline`]: the whole chain on synthetic data

pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod mlp;
pub mod pipeline;
pub mod preprocess;
pub mod reconstruct;
pub mod rng;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
