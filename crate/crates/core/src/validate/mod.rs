//! Grammar validation: residual and mIoU scoring, threshold calibration,
//! detection metrics, puzzle solving and report emission.

mod average;
mod metrics;
mod report;
mod score;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::syntax::SyntaxError;

pub use average::{averaged_semantics, miou_validation, patch_masks, step_iou, AveragedSemantics};
pub use metrics::{calibrate_threshold, classify, detection_metrics, DetectionReport, ThresholdModel, Verdict};
pub use report::{histogram_csv, results_csv, ImageScore, PuzzleOutcome, ScenarioResult, Scenario, CSV_HEADER};
pub use score::{
    best_index, residual_avg, residual_baseline, residual_trace, solve_puzzle, ResidualTrace, Scored, Scorer,
};

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("empty {0}")]
    Empty(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl ValidateError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ValidateError::Io { path: path.to_path_buf(), source }
    }
}

/// Which side of the threshold counts as corrupted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Residual scores: corrupted iff `score > τ`.
    HigherIsCorrupt,
    /// mIoU scores: corrupted iff `score < τ`.
    LowerIsCorrupt,
}

/// The three grammar test methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Bi-LSTM residual against the image's own next/previous semantics.
    Baseline,
    /// Bi-LSTM residual against trainset-averaged semantics.
    AvgSemantics,
    /// mIoU between patch masks and trainset-averaged masks.
    Miou,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Baseline, Method::AvgSemantics, Method::Miou];

    pub fn direction(self) -> Direction {
        match self {
            Method::Miou => Direction::LowerIsCorrupt,
            _ => Direction::HigherIsCorrupt,
        }
    }

    pub fn needs_model(self) -> bool {
        self != Method::Miou
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::AvgSemantics => "avg-semantics",
            Method::Miou => "miou",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = ValidateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ValidateError::Invalid(format!("unknown method '{s}' (baseline | avg-semantics | miou)")))
    }
}
