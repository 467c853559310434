//! Stage 1: part semantics from a small convolutional extractor, supervised
//! fine-tuning, two-stream PiCIE clustering, segmentation and merging.

mod kmeans;
mod losses;
mod model;
mod segment;
mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::DataError;
use crate::numcore::NumError;

pub use kmeans::{adjusted_rand_index, minibatch_kmeans, CentroidBank, KmeansInit, KmeansResult};
pub use losses::{dc_loss, dc_loss_graph, extractor_params, picie_graph, picie_losses, PicieLosses, PicieNodes};
pub use model::{classifier_graph, cross_entropy_graph, extractor_graph, FeatureMap, SegModel, STRIDE};
pub use segment::{merge_clusters, segment, segment_batch, segment_patches, ClusterMergeMap, Segmenter};
pub use train::{
    cross_entropy, feature_labels, finetune_patch_detector, finetune_prior, patch_pairs, train_picie,
    two_stream_features, PicieConfig, PicieEpoch, PicieOutcome, TrainConfig,
};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("empty {0}")]
    Empty(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("zero-norm vector: {0}")]
    ZeroNorm(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl ClusterError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ClusterError::Io { path: path.to_path_buf(), source }
    }
}
