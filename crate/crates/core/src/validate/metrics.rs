use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Direction, ValidateError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Correct,
    Corrupted,
}

/// Decision threshold plus the validation scores it was chosen from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub tau: f64,
    pub direction: Direction,
    /// Balanced accuracy of `tau` on the calibration scores.
    pub balanced_accuracy: f64,
    pub correct: Vec<f64>,
    pub corrupted: Vec<f64>,
}

impl ThresholdModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("threshold serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ValidateError> {
        let m: Self = serde_json::from_str(text).map_err(|e| ValidateError::Invalid(e.to_string()))?;
        if !m.tau.is_finite() {
            return Err(ValidateError::Invalid(format!("threshold {}", m.tau)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ValidateError> {
        std::fs::write(path, self.to_json()).map_err(|e| ValidateError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ValidateError> {
        let text = std::fs::read_to_string(path).map_err(|e| ValidateError::io(path, e))?;
        Self::from_json(&text)
    }
}

fn judge(score: f64, tau: f64, direction: Direction) -> Verdict {
    let corrupt = match direction {
        Direction::HigherIsCorrupt => score > tau,
        Direction::LowerIsCorrupt => score < tau,
    };
    if corrupt {
        Verdict::Corrupted
    } else {
        Verdict::Correct
    }
}

/// Strict comparison: a score equal to `τ` is correct.
pub fn classify(score: f64, model: &ThresholdModel) -> Verdict {
    judge(score, model.tau, model.direction)
}

fn balanced_accuracy(correct: &[f64], corrupted: &[f64], tau: f64, direction: Direction) -> f64 {
    let tnr = correct.iter().filter(|&&s| judge(s, tau, direction) == Verdict::Correct).count() as f64 / correct.len() as f64;
    let tpr =
        corrupted.iter().filter(|&&s| judge(s, tau, direction) == Verdict::Corrupted).count() as f64 / corrupted.len() as f64;
    (tnr + tpr) / 2.0
}

/// Picks the threshold maximizing balanced accuracy on validation scores.
///
/// Candidates are the midpoints between adjacent distinct scores plus the
/// smallest and largest score; ties go to the smallest candidate.
pub fn calibrate_threshold(correct: &[f64], corrupted: &[f64], direction: Direction) -> Result<ThresholdModel, ValidateError> {
    if correct.is_empty() || corrupted.is_empty() {
        return Err(ValidateError::Empty("calibration score list".into()));
    }
    if let Some(s) = correct.iter().chain(corrupted).find(|s| !s.is_finite()) {
        return Err(ValidateError::Invalid(format!("non-finite score {s}")));
    }
    let mut unique: Vec<f64> = correct.iter().chain(corrupted).copied().collect();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    let mut candidates = vec![unique[0]];
    candidates.extend(unique.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    if unique.len() > 1 {
        candidates.push(unique[unique.len() - 1]);
    }
    let mut best = (candidates[0], balanced_accuracy(correct, corrupted, candidates[0], direction));
    for &tau in &candidates[1..] {
        let acc = balanced_accuracy(correct, corrupted, tau, direction);
        if acc > best.1 {
            best = (tau, acc);
        }
    }
    Ok(ThresholdModel {
        tau: best.0,
        direction,
        balanced_accuracy: best.1,
        correct: correct.to_vec(),
        corrupted: corrupted.to_vec(),
    })
}

/// Confusion counts with corrupted as the positive class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    /// `None` when there are no corrupted samples.
    pub recall: Option<f64>,
    pub puzzle_rate: Option<f64>,
}

impl DetectionReport {
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        let total = tp + tn + fp + fn_;
        let accuracy = if total == 0 { 0.0 } else { (tp + tn) as f64 / total as f64 };
        let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
        Self { tp, tn, fp, fn_, accuracy, recall, puzzle_rate: None }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Tallies verdicts against ground truth (`true` = corrupted).
pub fn detection_metrics(verdicts: &[Verdict], labels: &[bool]) -> Result<DetectionReport, ValidateError> {
    if verdicts.len() != labels.len() {
        return Err(ValidateError::Mismatch(format!("{} verdicts for {} labels", verdicts.len(), labels.len())));
    }
    if verdicts.is_empty() {
        return Err(ValidateError::Empty("verdict list".into()));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (v, &corrupt) in verdicts.iter().zip(labels) {
        match (v, corrupt) {
            (Verdict::Corrupted, true) => tp += 1,
            (Verdict::Correct, false) => tn += 1,
            (Verdict::Corrupted, false) => fp += 1,
            (Verdict::Correct, true) => fn_ += 1,
        }
    }
    Ok(DetectionReport::from_counts(tp, tn, fp, fn_))
}
