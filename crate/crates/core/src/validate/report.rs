use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{DetectionReport, Verdict};
use super::score::ResidualTrace;
use super::{Method, ValidateError};

pub const CSV_HEADER: &str = "method,corruption,num_patch,ps,accuracy,recall,puzzle_rate";

/// What was evaluated: method, corruption and its strength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub method: Method,
    pub corruption: String,
    /// `None` means every patch.
    pub num_patch: Option<usize>,
    pub ps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub name: String,
    pub corrupted: bool,
    pub score: f64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<ResidualTrace>,
}

/// One puzzle: the score of every copy, where the original sat, and the pick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuzzleOutcome {
    pub name: String,
    pub scores: Vec<f64>,
    pub original: usize,
    pub pick: usize,
}

impl PuzzleOutcome {
    pub fn solved(&self) -> bool {
        self.pick == self.original
    }
}

/// One scenario's metrics with the per-image scores behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    /// Detection threshold; absent for puzzle scenarios.
    pub tau: Option<f64>,
    pub report: DetectionReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub puzzles: Vec<PuzzleOutcome>,
}

impl ScenarioResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ValidateError> {
        serde_json::from_str(text).map_err(|e| ValidateError::Invalid(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ValidateError> {
        std::fs::write(path, self.to_json()).map_err(|e| ValidateError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ValidateError> {
        let text = std::fs::read_to_string(path).map_err(|e| ValidateError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn csv_row(&self) -> String {
        let s = &self.scenario;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            s.method,
            s.corruption,
            s.num_patch.map_or_else(|| "all".to_string(), |n| n.to_string()),
            s.ps,
            if self.report.total() == 0 { String::new() } else { format!("{:.6}", self.report.accuracy) },
            opt(self.report.recall),
            opt(self.report.puzzle_rate)
        )
    }
}

/// One row per scenario under [`CSV_HEADER`].
pub fn results_csv(results: &[ScenarioResult]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in results {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// `score,label` rows for plotting score histograms.
pub fn histogram_csv(result: &ScenarioResult) -> String {
    let mut out = String::from("score,label\n");
    for img in &result.images {
        let _ = writeln!(out, "{},{}", img.score, if img.corrupted { "corrupted" } else { "correct" });
    }
    out
}
