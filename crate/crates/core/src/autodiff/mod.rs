//! Dense `f64` tensors with a define-by-run tape for reverse-mode gradients.

mod gemm;
pub mod numerics;
mod tape;
mod tensor;

pub use gemm::{gemm, Layout};
pub use tape::{BackwardStats, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("expected rank {expected}, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("expected a square matrix, got shape {shape:?}")]
    NotSquare { shape: Vec<usize> },
    #[error("{op}: empty axis")]
    EmptyAxis { op: &'static str },
    #[error("mask has {mask} entries for {rows} rows")]
    MaskLength { rows: usize, mask: usize },
    #[error("mask entries must be 0 or 1, got {value}")]
    MaskValue { value: f64 },
    #[error("pooling mask selects no rows")]
    EmptyPool,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("variable was not recorded on this tape")]
    ForeignVar,
    #[error("backward already ran on this tape")]
    BackwardTwice,
}
