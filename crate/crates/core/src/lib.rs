//! Locates the image regions a classifier relies on (RoI) and an attacker
//! modifies (RoA), partitions images into utility/vulnerability regions, and
//! evaluates blob-based neutralization as a post-hoc adversarial defense.

pub mod attack;
pub mod classifier;
pub mod container;
pub mod data;
pub mod error;
pub mod isolation;
pub mod metrics;
pub mod neutralization;
pub mod pipeline;
pub mod segregation;

pub use error::{Error, Result};
pub use neutralization::ScoreQuad;
pub use pipeline::{run_experiment, run_matrix, ExperimentConfig, RunOutcome, RunPaths};
