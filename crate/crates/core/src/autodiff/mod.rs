//! Dense tensors, a reverse-mode tape, and RMSprop.

pub mod checkpoint;
mod conv;
mod optim;
mod scalar;
mod tape;
mod tensor;

use thiserror::Error;

pub use conv::{conv_out_size, deconv_out_size};
pub use optim::{rmsprop_step, OptimizerConfig, ParamEntry, ParamStore, SharedParamStore};
pub use scalar::Scalar;
pub use tape::{BoundParams, Gradients, Params, Tape, Var};
pub use tensor::{l2_norm, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs a different element count than {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("layer (kernel {kernel}, stride {stride}, pad {pad}) does not fit input size {input}")]
    IncompatibleLayer { input: usize, kernel: usize, stride: usize, pad: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{0}: no inputs")]
    Empty(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("invalid optimizer config {0}")]
    InvalidConfig(String),
}
