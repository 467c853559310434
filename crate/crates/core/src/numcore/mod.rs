//! Dense arrays, a reverse-mode differentiable graph, Adam, and the IGWT
//! weight container.

mod array;
mod graph;
pub mod gradcheck;
pub mod kernels;
mod optim;
mod store;

pub use array::{DenseArray, Real};
pub use graph::{ArraySource, Gradients, Graph, NodeId, GATHER_ZERO};
pub use optim::{adam_step, Adam};
pub use store::{read_weights, write_weights, ParamStore, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("dims {dims:?} must be non-empty and positive")]
    BadDims { dims: Vec<usize> },
    #[error("dims {dims:?} do not match data length {len}")]
    LengthMismatch { dims: Vec<usize>, len: usize },
    #[error("node {id} ({op}): {msg}")]
    Node { id: usize, op: &'static str, msg: String },
    #[error("leaf '{name}' is not bound")]
    Unbound { name: String },
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("backward called before forward")]
    NotEvaluated,
    #[error("backward root must be scalar, got dims {dims:?}")]
    NonScalarRoot { dims: Vec<usize> },
    #[error("parameter '{name}': {msg}")]
    Param { name: String, msg: String },
    #[error("weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
