//! Minimal tensor engine with reverse-mode differentiation.
//!
//! Covers exactly the layer vocabulary the two networks need: "same"-padded
//! stride-1 convolutions (2D and 3D), 2×/2× max pooling, global average
//! pooling, dense layers, ReLU, inverted dropout, and MSE loss, plus Adam and
//! a linear learning-rate ramp. Values are `f32` in training; everything is
//! generic over [`Real`] so gradient checks can run the same code in `f64`.

mod checkpoint;
mod gemm;
mod graph;
mod optim;
mod tensor;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, AdamHyper, Checkpoint, CheckpointHeader, CheckpointMeta,
    TensorEntry, CHECKPOINT_MAGIC,
};
pub use graph::{Graph, NodeId, Phase};
pub use optim::{AdamState, LrSchedule};
pub use tensor::{Real, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("dropout probability {0} outside [0, 1)")]
    BadProbability(f64),
    #[error("node was not produced by tracked operations")]
    NoGraph,
    #[error("parameter has no gradient")]
    MissingGradient,
    #[error("epoch {epoch} outside schedule range 0..={total}")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("non-finite value produced")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
