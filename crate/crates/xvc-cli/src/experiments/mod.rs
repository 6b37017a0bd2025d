//! Experiment registry: each experiment is a strategy behind a common trait,
//! registered by name and selected at runtime by the CLI subcommand (or by
//! callers of [`find`]).

mod gradcheck;
mod metrics;
mod photometric;
mod robustness;
mod totalloss;
mod voxelsweep;

pub use gradcheck::{gradcheck_registry, negative_control_case, run_cases, GradCheckCase};

use std::path::PathBuf;

use crate::context::Context;
use xvc_core::Result;

/// One checked claim inside an experiment run.
#[derive(Debug, Clone)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Assertion { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Default)]
pub struct ExperimentReport {
    pub experiment: String,
    pub assertions: Vec<Assertion>,
    pub outputs: Vec<PathBuf>,
}

impl ExperimentReport {
    pub fn new(experiment: &str) -> Self {
        ExperimentReport { experiment: experiment.to_string(), ..Default::default() }
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    /// Human-readable summary on stdout: one line per assertion plus the
    /// produced files.
    pub fn print(&self) {
        for a in &self.assertions {
            let tag = if a.passed { "PASS" } else { "FAIL" };
            println!("[{tag}] {}: {}", a.name, a.detail);
        }
        for path in &self.outputs {
            println!("wrote {}", path.display());
        }
        let verdict = if self.passed() { "ok" } else { "FAILED" };
        println!("{}: {} ({} assertions)", self.experiment, verdict, self.assertions.len());
    }
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    fn summary(&self) -> &'static str;
    /// Built-in configuration used when no `--config` is given; also the
    /// base that user files override section by section.
    fn default_config(&self) -> &'static str;
    fn run(&self, ctx: &Context) -> Result<ExperimentReport>;
}

/// All experiments, in CLI listing order.
pub fn registry() -> Vec<Box<dyn Experiment>> {
    vec![
        Box::new(gradcheck::GradCheck),
        Box::new(photometric::PhotometricVulnerability),
        Box::new(robustness::RobustnessSweep),
        Box::new(voxelsweep::VoxelSweep),
        Box::new(totalloss::TotalLoss),
        Box::new(metrics::MetricsRunner),
    ]
}

pub fn find(name: &str) -> Option<Box<dyn Experiment>> {
    registry().into_iter().find(|e| e.name() == name)
}
