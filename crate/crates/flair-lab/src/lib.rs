//! Batch experiment runner over `flair-core`: JSON configs, end-to-end
//! pipelines (calibrate, observe, solve, evaluate), ablation sweeps, and
//! artifact emission (CSV, PGM, JSON manifest).

pub mod artifacts;
pub mod config;
pub mod experiment;

pub use artifacts::{emit_artifacts, Manifest};
pub use config::ExperimentConfig;
pub use experiment::{run_experiment, RunMetrics, RunMode, RunRecord, Variant, VariantOutcome};

/// Harness-level error split by exit code: configuration problems exit 1,
/// runtime failures exit 2.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Runtime(_) => 2,
        }
    }
}

impl From<flair_core::CoreError> for HarnessError {
    fn from(e: flair_core::CoreError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}
