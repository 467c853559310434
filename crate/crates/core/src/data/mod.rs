//! Images, label maps, raster transforms, file formats and the synthetic
//! dataset generator.

mod grid;
pub mod manifest;
pub mod pnm;
pub mod synthetic;
mod transform;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use grid::{nearest, resize_image, resize_mask, ImageGrid, LabelGrid, Raster, Rect};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use pnm::{load_image, load_mask, save_image, save_mask};
pub use synthetic::{generate_sample, generate_synthetic, DatasetInfo, Family, Sample, SyntheticDataset, SyntheticSpec};
pub use transform::{geometric, photometric, scale_geometric, ColorJitter, GeometricSpec, PhotometricParams};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("class id {value} out of range for {num_classes} classes")]
    ClassOutOfRange { value: usize, num_classes: usize },
    #[error("rect {rect:?} outside {height}x{width} grid")]
    Bounds { rect: Rect, height: usize, width: usize },
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("synthetic spec: {0}")]
    Spec(String),
    #[error("{path}:{line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    At { path: PathBuf, source: Box<DataError> },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn at(self, path: &Path) -> Self {
        DataError::At { path: path.to_path_buf(), source: Box::new(self) }
    }
}
