//! Stage 2: traversal plans, semantics vectors, the mask encoder and
//! bi-directional LSTM, and next/previous-semantics training.

mod model;
mod plan;
mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::DataError;
use crate::numcore::NumError;

pub use model::{
    batch_inputs, bilstm_forward, encode_mask, encode_patch, predict_batch, semantics_vector, syntax_graph, syntax_loss,
    Predictions, Sequence, SyntaxConfig, SyntaxModel, SyntaxNodes, DIRECTIONS, GATES,
};
pub use plan::{TraversalKind, TraversalPlan};
pub use train::{train_sequences, train_syntax, LrSchedule, SyntaxTrainConfig};

#[derive(Debug, Error)]
pub enum SyntaxError {
    #[error("traversal plan: {0}")]
    Plan(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty {0}")]
    Empty(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl SyntaxError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SyntaxError::Io { path: path.to_path_buf(), source }
    }
}
