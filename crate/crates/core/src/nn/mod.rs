//! Minimal dense-tensor runtime: reverse-mode tape, layer set, Adam, checkpoints.

pub mod activation;
pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{clip_global_norm, Adam, AdamConfig, StepOutcome};
pub use layers::{Affine, Conv1dParams, ConvLstmCellParams, LstmCellParams, LstmState, LstmWeights};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

/// Global-norm threshold applied before every optimizer step.
pub const GRAD_CLIP_NORM: f64 = 5.0;
