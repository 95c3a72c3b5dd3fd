//! Dataset bookkeeping, the training loops for both models, MAE evaluation,
//! synthetic cohort generation, and plot-data export.

mod eval;
mod manifest;
mod prep;
mod report;
mod synth;
mod train;

pub use eval::{evaluate_mae, EvalReport, HistogramBin};
pub use manifest::{split_manifest, Manifest, Split, SubjectRecord};
pub use prep::{preprocess_cohort, reference_from_split};
pub use report::{export_report, read_metrics, Metrics};
pub use synth::{
    generate_synthetic_cohort, synth_volume, synth_volume_at, ventricle_voxel_count, SynthConfig,
};
pub use train::{log_to_csv, train_model, EpochLog, TrainConfig, TrainOutput};

use crate::augment::AugmentError;
use crate::engine::EngineError;
use crate::models::ModelError;
use crate::nifti::NiftiError;
use crate::preprocess::PreprocessError;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("manifest has no records")]
    EmptyManifest,
    #[error("split {0:?} has no subjects")]
    EmptySplit(Split),
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid range: {0}")]
    BadRange(String),
    #[error("invalid manifest: {0}")]
    BadManifest(String),
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Write via a temp file in the same directory, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
