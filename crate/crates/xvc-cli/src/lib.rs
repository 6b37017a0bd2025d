//! Experiment harness for the cross-view consistency losses: reproducible,
//! seed-deterministic desk-scale experiments with CSV and image outputs.

pub mod context;
pub mod experiments;
pub mod parallel;
pub mod pipeline;

pub use context::{CliOverrides, Context, LossWeights};
pub use experiments::{find, registry, Experiment, ExperimentReport};
