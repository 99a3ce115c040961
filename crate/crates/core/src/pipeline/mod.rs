//! Dataset splits, preprocessing, training, evaluation and ablations.

mod ablation;
mod config;
mod data;
mod eval;
mod manifest;
mod split;
mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backbone::BackboneError;
use crate::event_io::EventError;
use crate::hypergraph::HypergraphError;
use crate::model::ModelError;
use crate::numerics::NumericsError;

pub use ablation::{ablation_suite, AblationGrid, AblationRow, AblationSetting, AblationTable};
pub use config::{RunConfig, SplitSettings};
pub use data::{one_view_each, prepare_recording, prepare_samples, Dataset, PreparedSplit, Sample};
pub use eval::{evaluate, evaluate_samples, rank_of, top_m, Evaluation, TopM};
pub use manifest::{load_manifests, RecordingManifest, MANIFEST_FILE};
pub use split::{make_splits, DatasetSplit, Partition, SampleRef, SplitMode};
pub use train::{
    forward_pass, load_run, train, train_samples, EpochMetrics, TrainOutcome, CHECKPOINT_FILE,
    CONFIG_FILE, METRICS_FILE,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("split: {0}")]
    Split(String),
    #[error("config: {0}")]
    Config(String),
    #[error("label {label} outside [0, {classes})")]
    Label { label: usize, classes: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<BackboneError> for PipelineError {
    fn from(e: BackboneError) -> Self {
        Self::Model(e.into())
    }
}

impl From<HypergraphError> for PipelineError {
    fn from(e: HypergraphError) -> Self {
        Self::Model(e.into())
    }
}
