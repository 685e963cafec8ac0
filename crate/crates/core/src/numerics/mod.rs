//! Dense tensors with reverse-mode differentiation and a seeded RNG.

mod graph;
mod rng;
mod tensor;

pub use graph::{AttnMask, Gradients, Graph, Var};
pub use rng::{RngState, SeededRng};
pub use tensor::{gemm, DType, MatRef, Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: index {index} out of range (bound {bound})")]
    Index { op: &'static str, index: usize, bound: usize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
}
