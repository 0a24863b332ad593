//! Decoder-only transformer with a pooled sigmoid classification head and
//! tied-embedding next-token generation.

mod checkpoint;
mod config;
mod forward;
mod generate;
mod params;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{predict_label, ModelConfig};
pub use forward::{explanation_rows, forward_graph, register, ForwardOutput, GraphOutput, LogitRows};
pub use generate::{DecodeMode, Generation};
pub use params::{param_shapes, LayerSet, ModelParams, ParamSet};


use thiserror::Error;

use crate::autodiff::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {field} {reason}")]
    Config { field: &'static str, reason: String },
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("sequence has no POST tokens to pool")]
    EmptyPool,
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("sequence has no EXPLANATION segment")]
    MissingExplanation,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}
