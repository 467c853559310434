use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{resize_mask, LabelGrid, Raster};
use crate::numcore::{read_weights, write_weights, DenseArray, Graph, NodeId, ParamStore, Real};

use super::plan::TraversalPlan;
use super::SyntaxError;

pub const GATES: [&str; 4] = ["i", "f", "g", "o"];
pub const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

/// Layer sizes of the stage-2 model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxConfig {
    pub num_classes: usize,
    /// Side of the square mask fed to the encoder.
    pub mask_res: usize,
    /// Encoded mask width.
    pub enc_dim: usize,
    pub hidden: usize,
}

impl SyntaxConfig {
    /// 64×64 masks, 128-d encoding and hidden size equal to the input size.
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, mask_res: 64, enc_dim: 128, hidden: 128 + num_classes }
    }

    /// Length of one step's input: encoded mask plus semantics vector.
    pub fn input_dim(&self) -> usize {
        self.enc_dim + self.num_classes
    }

    fn mask_len(&self) -> usize {
        self.mask_res * self.mask_res
    }

    fn check(&self) -> Result<(), SyntaxError> {
        if self.num_classes < 2 || self.mask_res == 0 || self.enc_dim == 0 || self.hidden == 0 {
            return Err(SyntaxError::Config(format!("invalid model sizes {self:?}")));
        }
        Ok(())
    }
}

/// Class proportions of a mask patch.
pub fn semantics_vector(mask: &LabelGrid, num_classes: usize) -> Result<Vec<f64>, SyntaxError> {
    let mut counts = vec![0usize; num_classes];
    for &v in mask.data() {
        *counts
            .get_mut(v as usize)
            .ok_or_else(|| SyntaxError::Config(format!("class id {v} out of range for {num_classes} classes")))? += 1;
    }
    let n = mask.data().len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Mask resized (nearest) to `res × res` with class ids scaled by `1/(C−1)`.
pub fn encode_mask(mask: &LabelGrid, res: usize, num_classes: usize) -> Result<Vec<f32>, SyntaxError> {
    let m = if mask.dims() == (res, res) { mask.clone() } else { resize_mask(mask, res, res)? };
    let scale = 1.0 / (num_classes.max(2) - 1) as f32;
    Ok(m.data().iter().map(|&v| v as f32 * scale).collect())
}

/// One traversal's model inputs: scaled masks `[G, R²]` and semantics vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub masks: DenseArray<f32>,
    pub semantics: Vec<Vec<f64>>,
}

impl Sequence {
    pub fn from_patches(cfg: &SyntaxConfig, patches: &[LabelGrid]) -> Result<Self, SyntaxError> {
        if patches.len() < 2 {
            return Err(SyntaxError::Config(format!("sequence of {} patches, need at least 2", patches.len())));
        }
        let mut masks = Vec::with_capacity(patches.len() * cfg.mask_len());
        let mut semantics = Vec::with_capacity(patches.len());
        for p in patches {
            semantics.push(semantics_vector(p, cfg.num_classes)?);
            masks.extend(encode_mask(p, cfg.mask_res, cfg.num_classes)?);
        }
        Ok(Self { masks: DenseArray::new(vec![patches.len(), cfg.mask_len()], masks)?, semantics })
    }

    /// Crops every plan rect out of a full-size mask.
    pub fn from_mask(cfg: &SyntaxConfig, mask: &LabelGrid, plan: &TraversalPlan) -> Result<Self, SyntaxError> {
        if mask.dims() != (plan.height, plan.width) {
            return Err(SyntaxError::Config(format!(
                "mask is {:?}, plan expects {}x{}",
                mask.dims(),
                plan.height,
                plan.width
            )));
        }
        let patches = plan.rects.iter().map(|&r| mask.crop(r)).collect::<Result<Vec<_>, _>>()?;
        Self::from_patches(cfg, &patches)
    }

    pub fn len(&self) -> usize {
        self.semantics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantics.is_empty()
    }

    /// The same steps starting at step `k` and wrapping around.
    pub fn rotated(&self, k: usize) -> Self {
        let g = self.len();
        let w = self.masks.cols();
        let order: Vec<usize> = (0..g).map(|t| (t + k) % g).collect();
        let masks = order.iter().flat_map(|&t| self.masks.row(t).to_vec()).collect();
        Self {
            masks: DenseArray::new(vec![g, w], masks).expect("dims"),
            semantics: order.iter().map(|&t| self.semantics[t].clone()).collect(),
        }
    }
}

/// Forward and backward predictions at every step, `C` values each.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    /// `forward[t]` predicts `s_{t+1}`.
    pub forward: Vec<Vec<f64>>,
    /// `backward[t]` predicts `s_{t−1}`.
    pub backward: Vec<Vec<f64>>,
}

/// Mask encoder, forward/backward LSTMs and their output projections.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntaxModel {
    pub params: ParamStore<f32>,
    cfg: SyntaxConfig,
}

fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], bound: f64) -> DenseArray<f32> {
    let n = dims.iter().product();
    DenseArray::new(dims.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect()).expect("dims")
}

impl SyntaxModel {
    pub fn new(cfg: SyntaxConfig, seed: u64) -> Result<Self, SyntaxError> {
        cfg.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let be = 1.0 / (cfg.mask_len() as f64).sqrt();
        params.insert("encoder.weight", uniform(&mut rng, &[cfg.mask_len(), cfg.enc_dim], be));
        params.insert("encoder.bias", uniform(&mut rng, &[cfg.enc_dim], be));
        let bh = 1.0 / (cfg.hidden as f64).sqrt();
        for dir in DIRECTIONS {
            for gate in GATES {
                params.insert(&format!("lstm.{dir}.W_{gate}"), uniform(&mut rng, &[cfg.input_dim() + cfg.hidden, cfg.hidden], bh));
                params.insert(&format!("lstm.{dir}.b_{gate}"), uniform(&mut rng, &[cfg.hidden], bh));
            }
            params.insert(&format!("proj.{dir}.weight"), uniform(&mut rng, &[cfg.hidden, cfg.num_classes], bh));
            params.insert(&format!("proj.{dir}.bias"), uniform(&mut rng, &[cfg.num_classes], bh));
        }
        Ok(Self { params, cfg })
    }

    /// Infers sizes from the stored records and checks every record's dims.
    pub fn from_params(params: ParamStore<f32>) -> Result<Self, SyntaxError> {
        let enc = params.require("encoder.weight")?;
        let proj = params.require("proj.fwd.weight")?;
        if enc.rank() != 2 || proj.rank() != 2 {
            return Err(SyntaxError::Config("encoder.weight and proj.fwd.weight must be matrices".into()));
        }
        let mask_res = (enc.dims()[0] as f64).sqrt().round() as usize;
        if mask_res * mask_res != enc.dims()[0] {
            return Err(SyntaxError::Config(format!("encoder input {} is not a square mask", enc.dims()[0])));
        }
        let cfg = SyntaxConfig { num_classes: proj.dims()[1], mask_res, enc_dim: enc.dims()[1], hidden: proj.dims()[0] };
        cfg.check()?;
        let fresh = Self::new(cfg, 0)?;
        for (name, v) in fresh.params.iter() {
            let got = params.require(name)?.dims();
            if got != v.dims() {
                return Err(SyntaxError::Config(format!("{name} has dims {got:?}, expected {:?}", v.dims())));
            }
        }
        if params.len() != fresh.params.len() {
            return Err(SyntaxError::Config(format!("{} records, expected {}", params.len(), fresh.params.len())));
        }
        Ok(Self { params, cfg })
    }

    pub fn config(&self) -> &SyntaxConfig {
        &self.cfg
    }

    pub fn save(&self, path: &Path) -> Result<(), SyntaxError> {
        let f = std::fs::File::create(path).map_err(|e| SyntaxError::io(path, e))?;
        write_weights(&self.params, std::io::BufWriter::new(f))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SyntaxError> {
        let f = std::fs::File::open(path).map_err(|e| SyntaxError::io(path, e))?;
        Self::from_params(read_weights(std::io::BufReader::new(f))?)
    }
}

/// Node ids of a batched stage-2 graph.
#[derive(Clone, Debug)]
pub struct SyntaxNodes {
    /// Per step, `[B, C]` forward predictions.
    pub forward: Vec<NodeId>,
    /// Per step, `[B, C]` backward predictions.
    pub backward: Vec<NodeId>,
    pub loss: NodeId,
}

fn rows<T: Real>(g: &mut Graph<T>, x: NodeId, first: usize, count: usize, width: usize) -> NodeId {
    let idx: Arc<[u32]> = (first * width..(first + count) * width).map(|i| i as u32).collect();
    g.gather(x, idx, vec![count, width])
}

fn lstm_direction<T: Real>(g: &mut Graph<T>, cfg: &SyntaxConfig, dir: &str, xs: &[NodeId], order: &[usize], batch: usize) -> Vec<NodeId> {
    let w: Vec<NodeId> = GATES.iter().map(|gate| g.param(&format!("lstm.{dir}.W_{gate}"))).collect();
    let b: Vec<NodeId> = GATES.iter().map(|gate| g.param(&format!("lstm.{dir}.b_{gate}"))).collect();
    let pw = g.param(&format!("proj.{dir}.weight"));
    let pb = g.param(&format!("proj.{dir}.bias"));
    let mut h = g.constant(DenseArray::zeros(&[batch, cfg.hidden]));
    let mut c = g.constant(DenseArray::zeros(&[batch, cfg.hidden]));
    let mut out = vec![None; xs.len()];
    for &t in order {
        let xh = g.concat(&[xs[t], h]);
        let pre: Vec<NodeId> = (0..4)
            .map(|k| {
                let a = g.matmul(xh, w[k]);
                g.add(a, b[k])
            })
            .collect();
        let i = g.sigmoid(pre[0]);
        let f = g.sigmoid(pre[1]);
        let gg = g.tanh(pre[2]);
        let o = g.sigmoid(pre[3]);
        let fc = g.mul(f, c);
        let ig = g.mul(i, gg);
        c = g.add(fc, ig);
        let tc = g.tanh(c);
        h = g.mul(o, tc);
        let p = g.matmul(h, pw);
        out[t] = Some(g.add(p, pb));
    }
    out.into_iter().map(|p| p.expect("every step visited")).collect()
}

/// Appends the full stage-2 graph for `batch` sequences of `steps` steps.
///
/// Reads inputs `masks` `[steps·batch, R²]` and `semantics`
/// `[steps·batch, C]`, both step-major (row `t·batch + b`). The loss is the
/// mean over all in-range terms of `‖p − s‖²`: forward predictions at steps
/// `0..G−1` against `s_{t+1}`, backward predictions at `1..G` against `s_{t−1}`.
pub fn syntax_graph<T: Real>(g: &mut Graph<T>, cfg: &SyntaxConfig, batch: usize, steps: usize) -> SyntaxNodes {
    let masks = g.input("masks");
    let sem = g.input("semantics");
    let ew = g.param("encoder.weight");
    let eb = g.param("encoder.bias");
    let enc = g.matmul(masks, ew);
    let enc = g.add(enc, eb);
    let x = g.concat(&[enc, sem]);
    let width = cfg.input_dim();
    let xs: Vec<NodeId> = (0..steps).map(|t| rows(g, x, t * batch, batch, width)).collect();
    let targets: Vec<NodeId> = (0..steps).map(|t| rows(g, sem, t * batch, batch, cfg.num_classes)).collect();
    let fwd_order: Vec<usize> = (0..steps).collect();
    let bwd_order: Vec<usize> = (0..steps).rev().collect();
    let forward = lstm_direction(g, cfg, "fwd", &xs, &fwd_order, batch);
    let backward = lstm_direction(g, cfg, "bwd", &xs, &bwd_order, batch);
    let mut terms = Vec::with_capacity(2 * steps);
    for t in 0..steps.saturating_sub(1) {
        let d = g.sub(forward[t], targets[t + 1]);
        terms.push(g.sum_squares(d));
    }
    for t in 1..steps {
        let d = g.sub(backward[t], targets[t - 1]);
        terms.push(g.sum_squares(d));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t);
    }
    let loss = g.scale(total, 1.0 / (terms.len() * batch) as f64);
    g.set_output(loss);
    SyntaxNodes { forward, backward, loss }
}

/// Step-major input bindings for a batch of equally long sequences.
pub fn batch_inputs<T: Real>(seqs: &[&Sequence]) -> Result<ParamStore<T>, SyntaxError> {
    let first = seqs.first().ok_or_else(|| SyntaxError::Empty("sequence batch".into()))?;
    let (g, w) = (first.len(), first.masks.cols());
    let c = first.semantics[0].len();
    if let Some(s) = seqs.iter().find(|s| s.len() != g || s.masks.cols() != w || s.semantics[0].len() != c) {
        return Err(SyntaxError::Config(format!(
            "batch mixes sequences of {g} steps and {} steps (or mask/class sizes differ)",
            s.len()
        )));
    }
    let b = seqs.len();
    let mut masks = Vec::with_capacity(g * b * w);
    let mut sem = Vec::with_capacity(g * b * c);
    for t in 0..g {
        for s in seqs {
            masks.extend(s.masks.row(t).iter().map(|&v| T::of(v as f64)));
            sem.extend(s.semantics[t].iter().map(|&v| T::of(v)));
        }
    }
    let mut store = ParamStore::new();
    store.insert("masks", DenseArray::new(vec![g * b, w], masks)?);
    store.insert("semantics", DenseArray::new(vec![g * b, c], sem)?);
    Ok(store)
}

fn check_sequence(model: &SyntaxModel, s: &Sequence) -> Result<(), SyntaxError> {
    let cfg = model.config();
    if s.len() < 2 {
        return Err(SyntaxError::Config(format!("sequence of {} steps, need at least 2", s.len())));
    }
    if s.masks.cols() != cfg.mask_len() || s.semantics.iter().any(|v| v.len() != cfg.num_classes) {
        return Err(SyntaxError::Config(format!(
            "sequence built for other sizes (mask {} vs {}, classes vs {})",
            s.masks.cols(),
            cfg.mask_len(),
            cfg.num_classes
        )));
    }
    Ok(())
}

/// Runs both LSTM streams over each sequence (batched, equal lengths).
pub fn predict_batch(model: &SyntaxModel, seqs: &[&Sequence]) -> Result<Vec<Predictions>, SyntaxError> {
    for s in seqs {
        check_sequence(model, s)?;
    }
    let inputs = batch_inputs::<f32>(seqs)?;
    let (b, steps) = (seqs.len(), seqs[0].len());
    let mut g = Graph::<f32>::new();
    let nodes = syntax_graph(&mut g, model.config(), b, steps);
    g.forward(&(&model.params, &inputs))?;
    let c = model.config().num_classes;
    let pick = |id: NodeId, i: usize| -> Vec<f64> {
        g.value(id).expect("evaluated").data()[i * c..(i + 1) * c].iter().map(|&v| v as f64).collect()
    };
    Ok((0..b)
        .map(|i| Predictions {
            forward: nodes.forward.iter().map(|&id| pick(id, i)).collect(),
            backward: nodes.backward.iter().map(|&id| pick(id, i)).collect(),
        })
        .collect())
}

/// Forward and backward predictions for one sequence.
pub fn bilstm_forward(model: &SyntaxModel, seq: &Sequence) -> Result<Predictions, SyntaxError> {
    Ok(predict_batch(model, &[seq])?.remove(0))
}

/// Encoded mask followed by the semantics vector (`enc_dim + C` values).
pub fn encode_patch(model: &SyntaxModel, patch: &LabelGrid) -> Result<Vec<f32>, SyntaxError> {
    let cfg = model.config();
    let encoded = encode_mask(patch, cfg.mask_res, cfg.num_classes)?;
    let w = model.params.require("encoder.weight")?;
    let b = model.params.require("encoder.bias")?;
    let mut out: Vec<f32> = (0..cfg.enc_dim)
        .map(|j| {
            let s: f64 = encoded.iter().enumerate().map(|(k, &m)| m as f64 * w.data()[k * cfg.enc_dim + j] as f64).sum();
            (s + b.data()[j] as f64) as f32
        })
        .collect();
    out.extend(semantics_vector(patch, cfg.num_classes)?.into_iter().map(|v| v as f32));
    Ok(out)
}

/// Mean of `‖p − s‖²` over the in-range forward and backward terms.
pub fn syntax_loss(pred: &Predictions, semantics: &[Vec<f64>]) -> Result<f64, SyntaxError> {
    let g = semantics.len();
    if g < 2 || pred.forward.len() != g || pred.backward.len() != g {
        return Err(SyntaxError::Config(format!(
            "{} targets for {}/{} predictions",
            g,
            pred.forward.len(),
            pred.backward.len()
        )));
    }
    let sq = |p: &[f64], s: &[f64]| p.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut total = 0.0;
    for t in 0..g - 1 {
        total += sq(&pred.forward[t], &semantics[t + 1]);
    }
    for t in 1..g {
        total += sq(&pred.backward[t], &semantics[t - 1]);
    }
    Ok(total / (2 * (g - 1)) as f64)
}
