use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabelGrid;
use crate::numcore::{adam_step, Adam, Graph};

use super::model::{batch_inputs, syntax_graph, Sequence, SyntaxModel};
use super::plan::TraversalPlan;
use super::SyntaxError;

/// Learning rate as a function of the (zero-based) epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Multiply by `gamma` once, after `after` epochs.
    Step { after: usize, gamma: f64 },
    /// Multiply by `gamma` at every milestone epoch.
    MultiStep { milestones: Vec<usize>, gamma: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Step { after, gamma } => {
                if epoch >= *after {
                    base * gamma
                } else {
                    base
                }
            }
            LrSchedule::MultiStep { milestones, gamma } => {
                base * gamma.powi(milestones.iter().filter(|&&m| epoch >= m).count() as i32)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntaxTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub seed: u64,
}

impl SyntaxTrainConfig {
    /// 40 epochs at 1e-4, dropping to 1e-5 after epoch 20.
    pub fn new(seed: u64) -> Self {
        Self { epochs: 40, lr: 1e-4, schedule: LrSchedule::Step { after: 20, gamma: 0.1 }, batch_size: 32, seed }
    }

    fn check(&self) -> Result<(), SyntaxError> {
        if self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(SyntaxError::Config(format!("batch size {} and lr {}", self.batch_size, self.lr)));
        }
        Ok(())
    }
}

/// Trains on prepared sequences; returns the mean loss of each epoch.
///
/// With `circular`, every sequence starts at a random rotation each epoch.
pub fn train_sequences(
    model: &mut SyntaxModel,
    seqs: &[Sequence],
    cfg: &SyntaxTrainConfig,
    circular: bool,
) -> Result<Vec<f64>, SyntaxError> {
    if seqs.is_empty() {
        return Err(SyntaxError::Empty("training set".into()));
    }
    cfg.check()?;
    let steps = seqs[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.schedule.lr_at(cfg.lr, epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let rotated: Vec<Sequence>;
            let batch: Vec<&Sequence> = if circular {
                rotated = idx.iter().map(|&i| seqs[i].rotated(rng.gen_range(0..steps))).collect();
                rotated.iter().collect()
            } else {
                idx.iter().map(|&i| &seqs[i]).collect()
            };
            let inputs = batch_inputs::<f32>(&batch)?;
            let mut g = Graph::<f32>::new();
            syntax_graph(&mut g, model.config(), batch.len(), steps);
            let loss = g.forward(&(&model.params, &inputs))?.item().expect("scalar") as f64;
            let grads = g.backward()?;
            adam_step(&mut model.params, &grads, &mut adam)?;
            total += loss * batch.len() as f64;
        }
        let mean = total / seqs.len() as f64;
        info!("epoch {} lr {:.2e} syntax loss {:.6}", epoch + 1, adam.lr, mean);
        log.push(mean);
    }
    Ok(log)
}

/// Trains on masks of correct images traversed by `plan`.
pub fn train_syntax(
    model: &mut SyntaxModel,
    masks: &[&LabelGrid],
    plan: &TraversalPlan,
    cfg: &SyntaxTrainConfig,
) -> Result<Vec<f64>, SyntaxError> {
    if masks.is_empty() {
        return Err(SyntaxError::Empty("training set".into()));
    }
    let seqs = masks
        .iter()
        .map(|m| Sequence::from_mask(model.config(), m, plan))
        .collect::<Result<Vec<_>, _>>()?;
    train_sequences(model, &seqs, cfg, plan.circular)
}
