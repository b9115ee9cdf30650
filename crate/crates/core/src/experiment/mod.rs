//! Config-driven orchestration: ingest, federated training per method, and
//! the energy/WSP comparison, with every artifact written under one output
//! directory.
//!
//! ```text
//! <output_dir>/
//!   cache/split.bin, split.sha256, summary.tsv
//!   runs/<method>/metrics.tsv, timing.tsv, checkpoint.txt, eval.json, manifest.json
//!   compare/report.json, summary.tsv, curves.tsv, manifest.json
//! ```

mod cache;
mod commands;
mod config;
mod output;

use std::path::PathBuf;

use thiserror::Error;

use crate::edf::{EdfError, SplitError, TrialError};
use crate::energy::EnergyError;
use crate::federated::FederatedError;
use crate::models::ModelError;
use crate::numerics::NumericsError;

pub use cache::{read_cache, write_cache, CacheFile};
pub use commands::{
    compare, ingest, inspect_path, train, CompareOutcome, CompareReport, EvalRecord, IngestOutcome, RunManifest,
    TrainOutcome,
};
pub use config::{DatasetConfig, ExperimentConfig, FederatedConfig, ModelConfig, DATA_ROOT_ENV};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing input file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Edf {
        path: PathBuf,
        #[source]
        source: EdfError,
    },
    #[error("{}: {source}", path.display())]
    Trials {
        path: PathBuf,
        #[source]
        source: TrialError,
    },
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("dataset cache {}: {reason}", path.display())]
    Cache { path: PathBuf, reason: String },
    #[error("{}: {reason}", path.display())]
    Artifact { path: PathBuf, reason: String },
    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Federated(#[from] FederatedError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl ExperimentError {
    /// Process exit status: 1 validation, 2 data, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            ExperimentError::MissingFile(_)
            | ExperimentError::Edf { .. }
            | ExperimentError::Trials { .. }
            | ExperimentError::Split(_)
            | ExperimentError::Cache { .. }
            | ExperimentError::Artifact { .. } => 2,
            ExperimentError::Federated(FederatedError::Setting(_) | FederatedError::NoRounds) => 1,
            ExperimentError::Model(ModelError::Config(_)) => 1,
            ExperimentError::Output { .. }
            | ExperimentError::Model(_)
            | ExperimentError::Federated(_)
            | ExperimentError::Energy(_)
            | ExperimentError::Numerics(_) => 3,
        }
    }
}
