//! Patch corruptions (shuffle, blackout, blur, puzzles) applied jointly to
//! an image and its mask, with replayable records.

mod ops;
mod patches;

use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;

pub use ops::{
    blackout_patches, blur_patches, corrupt, derive_seed, gaussian_kernel, make_puzzles, read_jsonl,
    shuffle_patches, write_jsonl, Anchor, CorruptionKind, CorruptionRecord, CorruptionSpec,
};
pub use patches::{check_rects, fold, tiling, unfold, Layer, PatchGrid};

#[derive(Debug, Error)]
pub enum CorruptError {
    #[error("{height}x{width} grid is not divisible by patch size {ps}")]
    Indivisible { height: usize, width: usize, ps: usize },
    #[error("bad patch rects: {0}")]
    Rects(String),
    #[error("num_patch {num_patch} outside {min}..={max}")]
    NumPatch { num_patch: usize, min: usize, max: usize },
    #[error("grids in one batch must share dims: {0:?} vs {1:?}")]
    Mismatch((usize, usize), (usize, usize)),
    #[error("empty batch")]
    Empty,
    #[error("blur kernel: {0}")]
    Kernel(String),
    #[error("invalid record: {0}")]
    Record(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}:{line}: {msg}")]
    Jsonl { path: PathBuf, line: usize, msg: String },
}
