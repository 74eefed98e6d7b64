//! Config-driven experiments: dataset files, evaluation metrics and run
//! directories with manifests.

pub mod config;
pub mod dataset_io;
pub mod eval;
pub mod experiment;
pub mod fmt;

use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig};
pub use eval::{evaluate, predict_failure_prob, EvalError, EvalReport};
pub use experiment::{
    apply_seed, evaluate_stage, fit_stage, run_experiment, run_in_memory, simulate_stage, sweep,
    verify_manifest, RunSummary,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage}: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub(crate) fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Self::Stage {
            stage,
            message: e.to_string(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
