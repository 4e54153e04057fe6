//! Minimal differentiable-layer toolkit: tensors, the closed layer set,
//! mean-reduced losses, Adam with step decay, finite-difference checks and
//! the checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, Differentiable, GradCheckReport};
pub use layers::{concat_backward, concat_forward, Layer, LayerCache, LayerSpec, Mode, Padding};
pub use loss::{loss_value_and_grad, LossKind, LossSpec};
pub use optim::{AdamConstants, LrSchedule, OptimizerState};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("concat needs equal spatial extents: {0:?} vs {1:?}")]
    ConcatSpatial(Vec<usize>, Vec<usize>),
    #[error("cache from a {cache} forward pass passed to a {layer} layer")]
    StaleCache { layer: &'static str, cache: &'static str },
    #[error("layer has no parameters")]
    MissingParams,
    #[error("invalid layer or loss specification: {0}")]
    InvalidSpec(String),
    #[error("MAPE is undefined for zero targets")]
    MapeZeroTarget,
    #[error("MSLE requires predictions and targets greater than -1")]
    MsleDomain,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint format version {found} not supported (this build reads {supported})")]
    Version { found: u32, supported: u32 },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(String),
}
