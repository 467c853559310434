use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabelGrid;
use crate::syntax::{bilstm_forward, predict_batch, Predictions, Sequence, SyntaxModel, TraversalPlan};

use super::average::{miou_validation, patch_masks, AveragedSemantics};
use super::{Direction, Method, ValidateError};

/// Images per prediction batch when scoring many masks.
const CHUNK: usize = 32;

/// Per-step L2 prediction errors. Undefined boundary terms are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualTrace {
    /// `‖p^for_{t-1} − s_t‖` for `t ≥ 1`.
    pub forward: Vec<f64>,
    /// `‖p^back_{t+1} − s_t‖` for `t ≤ G−2`.
    pub backward: Vec<f64>,
    pub combined: Vec<f64>,
    /// Sum of `combined`, accumulated in step order.
    pub e_pred: f64,
}

fn l2(p: &[f64], s: &[f64]) -> f64 {
    p.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Residuals of `pred` against per-step `targets`.
pub fn residual_trace(pred: &Predictions, targets: &[Vec<f64>]) -> Result<ResidualTrace, ValidateError> {
    let g = targets.len();
    if g < 2 || pred.forward.len() != g || pred.backward.len() != g {
        return Err(ValidateError::Mismatch(format!(
            "{} targets for {}/{} predictions",
            g,
            pred.forward.len(),
            pred.backward.len()
        )));
    }
    let forward: Vec<f64> = (0..g).map(|t| if t == 0 { 0.0 } else { l2(&pred.forward[t - 1], &targets[t]) }).collect();
    let backward: Vec<f64> = (0..g).map(|t| if t + 1 == g { 0.0 } else { l2(&pred.backward[t + 1], &targets[t]) }).collect();
    let combined: Vec<f64> = forward.iter().zip(&backward).map(|(f, b)| f + b).collect();
    let mut e_pred = 0.0;
    for c in &combined {
        e_pred += c;
    }
    Ok(ResidualTrace { forward, backward, combined, e_pred })
}

pub fn residual_baseline(model: &SyntaxModel, seq: &Sequence) -> Result<ResidualTrace, ValidateError> {
    residual_trace(&bilstm_forward(model, seq)?, &seq.semantics)
}

pub fn residual_avg(model: &SyntaxModel, seq: &Sequence, avg: &AveragedSemantics) -> Result<ResidualTrace, ValidateError> {
    if avg.len() != seq.len() {
        return Err(ValidateError::Mismatch(format!("{} averaged steps for a {}-step sequence", avg.len(), seq.len())));
    }
    residual_trace(&bilstm_forward(model, seq)?, &avg.semantics)
}

/// One image's score; residual methods also keep their trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub score: f64,
    pub trace: Option<ResidualTrace>,
}

/// A test method bound to the artifacts it needs.
#[derive(Clone, Copy, Debug)]
pub enum Scorer<'a> {
    Baseline(&'a SyntaxModel),
    AvgSemantics(&'a SyntaxModel, &'a AveragedSemantics),
    Miou(&'a AveragedSemantics),
}

impl Scorer<'_> {
    pub fn method(&self) -> Method {
        match self {
            Scorer::Baseline(_) => Method::Baseline,
            Scorer::AvgSemantics(..) => Method::AvgSemantics,
            Scorer::Miou(_) => Method::Miou,
        }
    }

    pub fn direction(&self) -> Direction {
        self.method().direction()
    }

    fn score_chunk(&self, masks: &[&LabelGrid], plan: &TraversalPlan) -> Result<Vec<Scored>, ValidateError> {
        let residual = |model: &SyntaxModel, avg: Option<&AveragedSemantics>| -> Result<Vec<Scored>, ValidateError> {
            let seqs =
                masks.iter().map(|m| Sequence::from_mask(model.config(), m, plan)).collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&Sequence> = seqs.iter().collect();
            let preds = predict_batch(model, &refs)?;
            preds
                .iter()
                .zip(&seqs)
                .map(|(p, s)| {
                    let targets = match avg {
                        Some(a) if a.len() != s.len() => {
                            return Err(ValidateError::Mismatch(format!("{} averaged steps for {} patches", a.len(), s.len())))
                        }
                        Some(a) => &a.semantics,
                        None => &s.semantics,
                    };
                    let trace = residual_trace(p, targets)?;
                    Ok(Scored { score: trace.e_pred, trace: Some(trace) })
                })
                .collect()
        };
        match *self {
            Scorer::Baseline(model) => residual(model, None),
            Scorer::AvgSemantics(model, avg) => residual(model, Some(avg)),
            Scorer::Miou(avg) => masks
                .iter()
                .map(|m| Ok(Scored { score: miou_validation(&patch_masks(m, plan)?, avg)?, trace: None }))
                .collect(),
        }
    }

    /// Scores full-size masks traversed by `plan`, in input order.
    ///
    /// Work is split into fixed chunks and spread over the current rayon
    /// pool; results do not depend on the thread count.
    pub fn score_masks(&self, masks: &[&LabelGrid], plan: &TraversalPlan) -> Result<Vec<Scored>, ValidateError> {
        let chunks: Vec<Vec<Scored>> =
            masks.par_chunks(CHUNK).map(|c| self.score_chunk(c, plan)).collect::<Result<_, _>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    pub fn score(&self, mask: &LabelGrid, plan: &TraversalPlan) -> Result<Scored, ValidateError> {
        Ok(self.score_chunk(&[mask], plan)?.remove(0))
    }
}

/// Index of the most grammatical score: lowest residual or highest mIoU,
/// ties to the lowest index.
pub fn best_index(scores: &[f64], direction: Direction) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => match direction {
                Direction::HigherIsCorrupt => s < scores[b],
                Direction::LowerIsCorrupt => s > scores[b],
            },
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Picks the copy the method judges to be the original.
pub fn solve_puzzle(scorer: &Scorer, copies: &[&LabelGrid], plan: &TraversalPlan) -> Result<usize, ValidateError> {
    if copies.is_empty() {
        return Err(ValidateError::Empty("puzzle".into()));
    }
    let scores: Vec<f64> = scorer.score_masks(copies, plan)?.into_iter().map(|s| s.score).collect();
    Ok(best_index(&scores, scorer.direction()).expect("non-empty"))
}
