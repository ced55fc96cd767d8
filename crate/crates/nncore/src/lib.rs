//! Minimal dense/convolutional network kernel: a reverse-mode tape over
//! `f64` tensors, conv and dense layers, Adam, and the training losses used
//! by the goal, policy, predictor and occupancy models.

mod adam;
pub mod gradcheck;
mod graph;
mod kernels;
pub mod layers;
pub mod loss;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{bilinear_taps, wrap_angle, Graph, RoiRequest, Taps, Var};
pub use params::{Checkpoint, Gradients, ParamId, ParamStore, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward called on a value that is not on this tape")]
    NoTape,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
