//! Reverse-mode differentiation over split-complex NCHW tensors.

mod adam;
mod batchnorm;
mod conv;
mod graph;
mod scalar;
mod tensor;

pub use adam::AdamState;
pub use batchnorm::{cbatchnorm, BnMode, BnRunning, ComplexBNState, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use conv::{conv2d_forward as cconv2d, Arithmetic, ComplexConvParams};
pub use graph::{crelu, hermitian_exp, sse_loss, Gradients, Graph, NodeId};
pub use scalar::Real;
pub use tensor::{ComplexTensor, Shape};

use crate::hermitian::HermitianError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch norm needs at least 2 samples per channel, got {0}")]
    BatchTooSmall(usize),
    #[error("backward from a non-scalar node of shape {0}")]
    NotScalar(Shape),
    #[error("node {0} refers to a later node")]
    Cycle(usize),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error(transparent)]
    Matrix(#[from] HermitianError),
}
