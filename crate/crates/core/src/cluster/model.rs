use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ImageGrid, Raster};
use crate::numcore::{read_weights, write_weights, DenseArray, Graph, NodeId, ParamStore, Real, GATHER_ZERO};

use super::ClusterError;

/// Feature stride of the extractor: one feature per 4×4 input block.
pub const STRIDE: usize = 4;
const HIDDEN: usize = 16;

/// Extractor `f_θ` (two 3×3 stride-2 tanh convolutions, 3→16→d) plus the
/// linear classifier `g_ω` (d→C), stored under `conv1.*`, `conv2.*` and
/// `classifier.*`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegModel {
    pub params: ParamStore<f32>,
    feature_dim: usize,
    num_classes: usize,
}

/// Per-pixel features of one or more images, `[n·h·w, d]` in row-major
/// image/pixel order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub features: DenseArray<f32>,
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], bound: f64) -> DenseArray<f32> {
    let n = dims.iter().product();
    DenseArray::new(dims.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect()).expect("dims")
}

impl SegModel {
    /// Fan-in scaled uniform initialization.
    pub fn new(feature_dim: usize, num_classes: usize, seed: u64) -> Result<Self, ClusterError> {
        if feature_dim == 0 || num_classes < 2 {
            return Err(ClusterError::Config(format!("feature dim {feature_dim}, classes {num_classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let b1 = 1.0 / 27f64.sqrt();
        let b2 = 1.0 / ((9 * HIDDEN) as f64).sqrt();
        let b3 = 1.0 / (feature_dim as f64).sqrt();
        params.insert("conv1.weight", uniform(&mut rng, &[27, HIDDEN], b1));
        params.insert("conv1.bias", uniform(&mut rng, &[HIDDEN], b1));
        params.insert("conv2.weight", uniform(&mut rng, &[9 * HIDDEN, feature_dim], b2));
        params.insert("conv2.bias", uniform(&mut rng, &[feature_dim], b2));
        params.insert("classifier.weight", uniform(&mut rng, &[feature_dim, num_classes], b3));
        params.insert("classifier.bias", uniform(&mut rng, &[num_classes], b3));
        Ok(Self { params, feature_dim, num_classes })
    }

    /// Wraps loaded weights after checking every record's dims.
    pub fn from_params(params: ParamStore<f32>) -> Result<Self, ClusterError> {
        let w = params.require("classifier.weight")?;
        if w.rank() != 2 {
            return Err(ClusterError::Config("classifier.weight must be a matrix".into()));
        }
        let (d, c) = (w.dims()[0], w.dims()[1]);
        let expect: [(&str, Vec<usize>); 6] = [
            ("conv1.weight", vec![27, HIDDEN]),
            ("conv1.bias", vec![HIDDEN]),
            ("conv2.weight", vec![9 * HIDDEN, d]),
            ("conv2.bias", vec![d]),
            ("classifier.weight", vec![d, c]),
            ("classifier.bias", vec![c]),
        ];
        for (name, dims) in expect {
            let got = params.require(name)?.dims();
            if got != dims.as_slice() {
                return Err(ClusterError::Config(format!("{name} has dims {got:?}, expected {dims:?}")));
            }
        }
        Ok(Self { params, feature_dim: d, num_classes: c })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Replaces the classifier with a fresh one for `num_classes` classes.
    pub fn reset_classifier(&mut self, num_classes: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = 1.0 / (self.feature_dim as f64).sqrt();
        self.params.insert("classifier.weight", uniform(&mut rng, &[self.feature_dim, num_classes], b));
        self.params.insert("classifier.bias", uniform(&mut rng, &[num_classes], b));
        self.num_classes = num_classes;
    }

    pub fn save(&self, path: &Path) -> Result<(), ClusterError> {
        let f = std::fs::File::create(path).map_err(|e| ClusterError::io(path, e))?;
        write_weights(&self.params, std::io::BufWriter::new(f))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClusterError> {
        let f = std::fs::File::open(path).map_err(|e| ClusterError::io(path, e))?;
        Self::from_params(read_weights(std::io::BufReader::new(f))?)
    }

    /// Features of a batch of equally sized images.
    pub fn features(&self, images: &[&ImageGrid]) -> Result<FeatureMap, ClusterError> {
        let (h, w) = check_batch(images)?;
        let mut g = Graph::<f32>::new();
        let x = g.input("images");
        extractor_graph(&mut g, x, images.len(), h, w);
        let src = (&self.params, &batch_input(images));
        let out = g.forward(&src)?.clone();
        Ok(FeatureMap { height: h / STRIDE, width: w / STRIDE, features: out })
    }

    /// Classifier logits at feature resolution, `[n·h·w, C]`.
    pub fn logits(&self, images: &[&ImageGrid]) -> Result<FeatureMap, ClusterError> {
        let (h, w) = check_batch(images)?;
        let mut g = Graph::<f32>::new();
        let x = g.input("images");
        let f = extractor_graph(&mut g, x, images.len(), h, w);
        classifier_graph(&mut g, f);
        let src = (&self.params, &batch_input(images));
        let out = g.forward(&src)?.clone();
        Ok(FeatureMap { height: h / STRIDE, width: w / STRIDE, features: out })
    }
}

/// Checks a batch is non-empty, uniformly sized and stride-aligned.
pub(crate) fn check_batch(images: &[&ImageGrid]) -> Result<(usize, usize), ClusterError> {
    let first = images.first().ok_or_else(|| ClusterError::Empty("image batch".into()))?;
    let (h, w) = first.dims();
    if h % STRIDE != 0 || w % STRIDE != 0 || h < STRIDE || w < STRIDE {
        return Err(ClusterError::Config(format!("image dims {h}x{w} must be positive multiples of {STRIDE}")));
    }
    if let Some(img) = images.iter().find(|i| i.dims() != (h, w)) {
        return Err(ClusterError::Config(format!("batch mixes {h}x{w} and {:?} images", img.dims())));
    }
    Ok((h, w))
}

/// Binding for the `images` input: `[n·h·w, 3]`.
pub(crate) fn batch_input(images: &[&ImageGrid]) -> ParamStore<f32> {
    let (h, w) = images[0].dims();
    let mut data = Vec::with_capacity(images.len() * h * w * 3);
    for img in images {
        data.extend_from_slice(img.raw());
    }
    let mut s = ParamStore::new();
    s.insert("images", DenseArray::new(vec![images.len() * h * w, 3], data).expect("dims"));
    s
}

/// im2col index for a 3×3 stride-2 convolution over `[n·h·w, c]` with
/// `pad_before` rows/cols of zero padding on the top/left.
fn conv_index(n: usize, h: usize, w: usize, c: usize, pad_before: usize) -> (Arc<[u32]>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(n * oh * ow * 9 * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (2 * oy + ky) as isize - pad_before as isize;
                        let ix = (2 * ox + kx) as isize - pad_before as isize;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                        for ch in 0..c {
                            idx.push(if inside {
                                (((b * h + iy as usize) * w + ix as usize) * c + ch) as u32
                            } else {
                                GATHER_ZERO
                            });
                        }
                    }
                }
            }
        }
    }
    (idx.into(), oh, ow)
}

/// Appends `f_θ` to `g` for input node `x` holding `[n·h·w, 3]` pixels.
/// Returns the feature node `[n·(h/4)·(w/4), d]`.
pub fn extractor_graph<T: Real>(g: &mut Graph<T>, x: NodeId, n: usize, h: usize, w: usize) -> NodeId {
    // conv1 pads one pixel on every side; conv2 pads only bottom/right so
    // feature (i, j) is centred on input pixel (4i + 2, 4j + 2).
    let (idx1, h1, w1) = conv_index(n, h, w, 3, 1);
    let cols1 = g.gather(x, idx1, vec![n * h1 * w1, 27]);
    let w1n = g.param("conv1.weight");
    let b1n = g.param("conv1.bias");
    let a1 = g.matmul(cols1, w1n);
    let a1 = g.add(a1, b1n);
    let y1 = g.tanh(a1);
    let (idx2, h2, w2) = conv_index(n, h1, w1, HIDDEN, 0);
    let cols2 = g.gather(y1, idx2, vec![n * h2 * w2, 9 * HIDDEN]);
    let w2n = g.param("conv2.weight");
    let b2n = g.param("conv2.bias");
    let a2 = g.matmul(cols2, w2n);
    let a2 = g.add(a2, b2n);
    g.tanh(a2)
}

/// Appends `g_ω` (logits) to a feature node.
pub fn classifier_graph<T: Real>(g: &mut Graph<T>, features: NodeId) -> NodeId {
    let w = g.param("classifier.weight");
    let b = g.param("classifier.bias");
    let z = g.matmul(features, w);
    g.add(z, b)
}

/// Mean cross-entropy of `logits` `[m, C]` against `labels` (one per row).
pub fn cross_entropy_graph<T: Real>(g: &mut Graph<T>, logits: NodeId, labels: &[u8], num_classes: usize) -> NodeId {
    let lsm = g.log_softmax(logits);
    let idx: Arc<[u32]> = labels.iter().enumerate().map(|(i, &c)| (i * num_classes + c as usize) as u32).collect();
    let picked = g.gather(lsm, idx, vec![labels.len()]);
    let m = g.mean(picked);
    g.scale(m, -1.0)
}
