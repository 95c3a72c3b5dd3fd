//! Brain-age regression toolkit.
//!
//! End-to-end pieces for predicting chronological age from skull-stripped,
//! MNI-registered T1 volumes: NIfTI-1 reading/writing, intensity preprocessing
//! (reference quantile table, histogram matching, 0–255 min-max), training-time
//! augmentation, a small reverse-mode tensor engine with the exact layer
//! vocabulary the two networks need, the 3D whole-volume and 2D sliced models
//! with median fusion, and dataset/training/evaluation plumbing with a
//! synthetic phantom cohort for desk-scale verification.
//!
//! Everything is seeded and deterministic: identical inputs, configs, and
//! seeds produce bit-identical volumes, checkpoints, and reports.

pub mod augment;
pub mod engine;
pub mod models;
pub mod nifti;
pub mod pipeline;
pub mod preprocess;
pub mod rng;

pub use engine::{AdamState, Graph, LrSchedule, NodeId, Phase, Real, Tensor};
pub use models::{Model, ModelKind, ModelSpec, SubjectPrediction};
pub use nifti::Volume;
pub use pipeline::{EvalReport, Manifest, Split, SubjectRecord, TrainConfig};
pub use preprocess::{QuantileTable, Slice};
