use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabelGrid, Raster};
use crate::syntax::{semantics_vector, TraversalPlan};

use super::ValidateError;

/// Trainset reference for each traversal step: the modal patch mask and the
/// mean semantics vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AveragedSemantics {
    pub num_classes: usize,
    pub masks: Vec<LabelGrid>,
    pub semantics: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct StepRecord {
    height: usize,
    width: usize,
    mask: Vec<u8>,
    semantics: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AveragedRecord {
    num_classes: usize,
    steps: Vec<StepRecord>,
}

impl AveragedSemantics {
    /// Step count `G`.
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn to_json(&self) -> String {
        let rec = AveragedRecord {
            num_classes: self.num_classes,
            steps: self
                .masks
                .iter()
                .zip(&self.semantics)
                .map(|(m, s)| {
                    let (height, width) = m.dims();
                    StepRecord { height, width, mask: m.data().to_vec(), semantics: s.clone() }
                })
                .collect(),
        };
        serde_json::to_string(&rec).expect("averaged semantics serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ValidateError> {
        let rec: AveragedRecord = serde_json::from_str(text).map_err(|e| ValidateError::Invalid(e.to_string()))?;
        let mut masks = Vec::with_capacity(rec.steps.len());
        let mut semantics = Vec::with_capacity(rec.steps.len());
        for s in rec.steps {
            if s.semantics.len() != rec.num_classes {
                return Err(ValidateError::Invalid(format!("{} semantics for {} classes", s.semantics.len(), rec.num_classes)));
            }
            masks.push(LabelGrid::new(s.height, s.width, rec.num_classes, s.mask)?);
            semantics.push(s.semantics);
        }
        if masks.len() < 2 {
            return Err(ValidateError::Invalid(format!("{} steps, need at least 2", masks.len())));
        }
        Ok(Self { num_classes: rec.num_classes, masks, semantics })
    }

    pub fn save(&self, path: &Path) -> Result<(), ValidateError> {
        std::fs::write(path, self.to_json()).map_err(|e| ValidateError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ValidateError> {
        let text = std::fs::read_to_string(path).map_err(|e| ValidateError::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Crops each plan rect out of a full-size mask, in plan order.
pub fn patch_masks(mask: &LabelGrid, plan: &TraversalPlan) -> Result<Vec<LabelGrid>, ValidateError> {
    if mask.dims() != (plan.height, plan.width) {
        return Err(ValidateError::Mismatch(format!(
            "mask is {:?}, plan expects {}x{}",
            mask.dims(),
            plan.height,
            plan.width
        )));
    }
    Ok(plan.rects.iter().map(|&r| mask.crop(r)).collect::<Result<Vec<_>, _>>()?)
}

/// Per-pixel modal class (ties to the lowest id) and renormalized mean
/// semantics at every step of `plan`.
pub fn averaged_semantics(
    masks: &[&LabelGrid],
    plan: &TraversalPlan,
    num_classes: usize,
) -> Result<AveragedSemantics, ValidateError> {
    if masks.is_empty() {
        return Err(ValidateError::Empty("trainset".into()));
    }
    let patches = masks.iter().map(|m| patch_masks(m, plan)).collect::<Result<Vec<_>, _>>()?;
    let mut out_masks = Vec::with_capacity(plan.len());
    let mut out_sem = Vec::with_capacity(plan.len());
    for t in 0..plan.len() {
        let (h, w) = patches[0][t].dims();
        let mut counts = vec![0u32; h * w * num_classes];
        let mut mean = vec![0.0; num_classes];
        for img in &patches {
            let p = &img[t];
            for (i, &c) in p.data().iter().enumerate() {
                if c as usize >= num_classes {
                    return Err(ValidateError::Invalid(format!("class {c} with {num_classes} classes")));
                }
                counts[i * num_classes + c as usize] += 1;
            }
            for (m, v) in mean.iter_mut().zip(semantics_vector(p, num_classes)?) {
                *m += v;
            }
        }
        let modal: Vec<u8> = counts
            .chunks(num_classes)
            .map(|cs| {
                // max_by_key keeps the last maximum, so scan in reverse.
                cs.iter().enumerate().rev().max_by_key(|&(_, &n)| n).map(|(c, _)| c as u8).unwrap_or(0)
            })
            .collect();
        let total: f64 = mean.iter().sum();
        out_masks.push(LabelGrid::new(h, w, num_classes, modal)?);
        out_sem.push(mean.into_iter().map(|v| v / total).collect());
    }
    Ok(AveragedSemantics { num_classes, masks: out_masks, semantics: out_sem })
}

/// Mean IoU over classes present in either mask.
pub fn step_iou(a: &LabelGrid, b: &LabelGrid, num_classes: usize) -> Result<f64, ValidateError> {
    if a.dims() != b.dims() {
        return Err(ValidateError::Mismatch(format!("patch {:?} vs {:?}", a.dims(), b.dims())));
    }
    let mut inter = vec![0usize; num_classes];
    let mut union = vec![0usize; num_classes];
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x as usize, y as usize);
        if x >= num_classes || y >= num_classes {
            return Err(ValidateError::Invalid(format!("class {} with {num_classes} classes", x.max(y))));
        }
        if x == y {
            inter[x] += 1;
            union[x] += 1;
        } else {
            union[x] += 1;
            union[y] += 1;
        }
    }
    let present: Vec<f64> = (0..num_classes).filter(|&c| union[c] > 0).map(|c| inter[c] as f64 / union[c] as f64).collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// Mean over steps of the per-step IoU against the averaged masks.
pub fn miou_validation(patches: &[LabelGrid], avg: &AveragedSemantics) -> Result<f64, ValidateError> {
    if patches.len() != avg.len() {
        return Err(ValidateError::Mismatch(format!("{} patches for {} steps", patches.len(), avg.len())));
    }
    let mut total = 0.0;
    for (p, m) in patches.iter().zip(&avg.masks) {
        total += step_iou(p, m, avg.num_classes)?;
    }
    Ok(total / patches.len() as f64)
}
