//! Python module `grammarscope`: synthetic data, corruption, part
//! segmentation, syntax models and grammar-based corruption detection.

use std::fmt::Display;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use grammarscope_core::cluster::{finetune_prior, segment_batch, train_picie, PicieConfig, SegModel, Segmenter, TrainConfig};
use grammarscope_core::corrupt::{Anchor, CorruptionSpec, Layer};
use grammarscope_core::data::{
    generate_synthetic, load_image, load_mask, save_image, save_mask, Family, ImageGrid, LabelGrid, PhotometricParams, Raster,
    SyntheticSpec,
};
use grammarscope_core::syntax::{
    semantics_vector, train_syntax, LrSchedule, SyntaxConfig, SyntaxModel, SyntaxTrainConfig, TraversalPlan,
};
use grammarscope_core::validate::{
    averaged_semantics, calibrate_threshold, classify, detection_metrics, solve_puzzle, AveragedSemantics, Method, Scorer,
    ThresholdModel, Verdict,
};

fn err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn family(name: &str) -> PyResult<Family> {
    match name {
        "face" => Ok(Family::Face),
        "room" => Ok(Family::Room),
        _ => Err(PyValueError::new_err(format!("unknown family '{name}' (face | room)"))),
    }
}

/// RGB image with channel values in [0, 1], stored row-major as HxWx3.
#[pyclass(name = "Image", module = "grammarscope", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: ImageGrid,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(height: usize, width: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self { inner: ImageGrid::new(height, width, data).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_image(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_image(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    /// Flat list of channel values.
    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.height(), self.inner.width())
    }
}

/// Per-pixel class ids.
#[pyclass(name = "Mask", module = "grammarscope", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMask {
    inner: LabelGrid,
}

#[pymethods]
impl PyMask {
    #[new]
    fn new(height: usize, width: usize, num_classes: usize, data: Vec<u8>) -> PyResult<Self> {
        Ok(Self { inner: LabelGrid::new(height, width, num_classes, data).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: load_mask(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_mask(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn data(&self) -> Vec<u8> {
        self.inner.data().to_vec()
    }

    /// Class-proportion histogram of the whole mask.
    fn semantics(&self) -> PyResult<Vec<f64>> {
        semantics_vector(&self.inner, self.inner.num_classes()).map_err(err)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Mask({}x{}, classes={})", self.inner.height(), self.inner.width(), self.inner.num_classes())
    }
}

/// Ordered patch rectangles traversed by the syntax model.
#[pyclass(name = "TraversalPlan", module = "grammarscope", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPlan {
    inner: TraversalPlan,
}

#[pymethods]
impl PyPlan {
    /// Serpentine row scan over non-overlapping ps x ps tiles.
    #[staticmethod]
    fn zigzag(height: usize, width: usize, ps: usize) -> PyResult<Self> {
        Ok(Self { inner: TraversalPlan::zigzag(height, width, ps).map_err(err)? })
    }

    /// Five ps x ps crops centred on `anchors` (row, col), or on the
    /// synthetic face landmarks when no anchors are given.
    #[staticmethod]
    #[pyo3(signature = (height, width, ps, anchors=None, circular=false))]
    fn five_crop(height: usize, width: usize, ps: usize, anchors: Option<Vec<(usize, usize)>>, circular: bool) -> PyResult<Self> {
        let anchors = anchors.unwrap_or_else(|| SyntheticSpec::new(Family::Face, height, width, 1, 0).anchors());
        let mut inner = TraversalPlan::five_crop(height, width, ps, &anchors).map_err(err)?;
        inner.circular = circular;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: TraversalPlan::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn ps(&self) -> usize {
        self.inner.ps
    }

    /// (top, left, height, width) per step.
    fn rects(&self) -> Vec<(usize, usize, usize, usize)> {
        self.inner.rects.iter().map(|r| (r.top, r.left, r.height, r.width)).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("TraversalPlan({:?}, ps={}, steps={})", self.inner.kind, self.inner.ps, self.inner.len())
    }
}

/// Generates `n` synthetic (image, mask) pairs; sample i uses seed + i.
#[pyfunction]
#[pyo3(signature = (family_name, height, width, n, seed))]
fn generate(family_name: &str, height: usize, width: usize, n: usize, seed: u64) -> PyResult<Vec<(PyImage, PyMask)>> {
    let spec = SyntheticSpec::new(family(family_name)?, height, width, n, seed);
    let data = generate_synthetic(&spec).map_err(err)?;
    Ok(data.samples.into_iter().map(|s| (PyImage { inner: s.image }, PyMask { inner: s.mask })).collect())
}

fn anchor(ps: Option<usize>, plan: Option<&PyPlan>) -> PyResult<Anchor> {
    match (ps, plan) {
        (Some(ps), None) => Ok(Anchor::Grid { ps }),
        (None, Some(p)) => Ok(Anchor::Rects { rects: p.inner.rects.clone() }),
        _ => Err(PyValueError::new_err("give exactly one of ps (grid patches) or plan (its rects)")),
    }
}

fn layers(image: &PyImage, mask: Option<&PyMask>) -> Vec<Layer> {
    let mut out = vec![Layer::Image(image.inner.clone())];
    out.extend(mask.map(|m| Layer::Mask(m.inner.clone())));
    out
}

type Pair = (PyImage, Option<PyMask>);

fn unpack(mut layers: impl Iterator<Item = Layer>) -> Pair {
    let image = layers.next().and_then(Layer::into_image).expect("image layer first");
    let mask = layers.next().and_then(Layer::into_mask);
    (PyImage { inner: image }, mask.map(|m| PyMask { inner: m }))
}

/// Corrupts an image (and optionally its mask with the same plan).
///
/// `kind` is shuffle, blackout or blur. Patches are either a ps grid or
/// the rects of `plan`. Returns (image, mask or None, record as JSON).
#[pyfunction]
#[pyo3(signature = (image, kind, num_patch, seed, mask=None, ps=None, plan=None, kernel_size=7, sigma=3.0))]
#[allow(clippy::too_many_arguments)]
fn corrupt(
    image: PyRef<'_, PyImage>,
    kind: &str,
    num_patch: usize,
    seed: u64,
    mask: Option<PyRef<'_, PyMask>>,
    ps: Option<usize>,
    plan: Option<PyRef<'_, PyPlan>>,
    kernel_size: usize,
    sigma: f64,
) -> PyResult<(PyImage, Option<PyMask>, String)> {
    let spec = match kind {
        "shuffle" => CorruptionSpec::Shuffle { num_patch },
        "blackout" => CorruptionSpec::Blackout { num_patch },
        "blur" => CorruptionSpec::Blur { num_patch, kernel_size, sigma },
        _ => return Err(PyValueError::new_err(format!("unknown corruption '{kind}' (shuffle | blackout | blur)"))),
    };
    let anchor = anchor(ps, plan.as_deref())?;
    let input = layers(&image, mask.as_deref());
    let (out, record) = grammarscope_core::corrupt::corrupt(&input, &spec, &anchor, seed).map_err(err)?;
    let (img, m) = unpack(out.into_iter().map(|mut copies| copies.remove(0)));
    Ok((img, m, serde_json::to_string(&record).map_err(err)?))
}

/// The original followed by `num_perm` fully permuted copies.
#[pyfunction]
#[pyo3(signature = (image, num_perm, seed, mask=None, ps=None, plan=None))]
fn puzzle(
    image: PyRef<'_, PyImage>,
    num_perm: usize,
    seed: u64,
    mask: Option<PyRef<'_, PyMask>>,
    ps: Option<usize>,
    plan: Option<PyRef<'_, PyPlan>>,
) -> PyResult<Vec<Pair>> {
    let anchor = anchor(ps, plan.as_deref())?;
    let input = layers(&image, mask.as_deref());
    let (out, _) = grammarscope_core::corrupt::corrupt(&input, &CorruptionSpec::Puzzle { num_perm }, &anchor, seed).map_err(err)?;
    // `out` is indexed [layer][copy]; regroup by copy.
    let copies = out[0].len();
    Ok((0..copies).map(|j| unpack(out.iter().map(|layer| layer[j].clone()))).collect())
}

/// Pixel feature extractor with a per-pixel part classifier.
#[pyclass(name = "SegModel", module = "grammarscope")]
struct PySegModel {
    inner: SegModel,
}

fn images(list: &[PyRef<'_, PyImage>]) -> Vec<ImageGrid> {
    list.iter().map(|i| i.inner.clone()).collect()
}

#[pymethods]
impl PySegModel {
    #[new]
    #[pyo3(signature = (num_classes, feature_dim=32, seed=0))]
    fn new(num_classes: usize, feature_dim: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: SegModel::new(feature_dim, num_classes, seed).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: SegModel::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    /// Unsupervised PiCIE training with photometric jitter only; returns
    /// the total loss per epoch.
    #[pyo3(signature = (images, k=10, epochs=5, lr=1e-3, batch_size=8, seed=0, km_init=5, km_num=4, km_iter=30, km_sample=256))]
    #[allow(clippy::too_many_arguments)]
    fn train_picie(
        &mut self,
        images: Vec<PyRef<'_, PyImage>>,
        k: usize,
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
        km_init: usize,
        km_num: usize,
        km_iter: usize,
        km_sample: usize,
    ) -> PyResult<Vec<f64>> {
        let owned = self::images(&images);
        let refs: Vec<&ImageGrid> = owned.iter().collect();
        let mut cfg = PicieConfig::new(seed);
        cfg.k = k;
        cfg.epochs = epochs;
        cfg.lr = lr;
        cfg.batch_size = batch_size;
        cfg.km_init = km_init;
        cfg.km_num = km_num;
        cfg.km_iter = km_iter;
        cfg.km_sample = km_sample;
        cfg.jitter = PhotometricParams { gain: 0.1, bias: 0.1 };
        cfg.geometric = false;
        let out = train_picie(&mut self.inner, &refs, &cfg).map_err(err)?;
        Ok(out.log.iter().map(|e| e.total).collect())
    }

    /// Supervised fine-tune on labeled pairs; returns the loss per epoch.
    #[pyo3(signature = (images, masks, epochs=10, lr=1e-2, batch_size=10, seed=0))]
    fn finetune(
        &mut self,
        images: Vec<PyRef<'_, PyImage>>,
        masks: Vec<PyRef<'_, PyMask>>,
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        if images.len() != masks.len() {
            return Err(PyValueError::new_err(format!("{} images for {} masks", images.len(), masks.len())));
        }
        let pairs: Vec<(&ImageGrid, &LabelGrid)> = images.iter().zip(&masks).map(|(i, m)| (&i.inner, &m.inner)).collect();
        finetune_prior(&mut self.inner, &pairs, &TrainConfig { epochs, lr, batch_size, seed }).map_err(err)
    }

    /// Full-resolution part masks from the classifier head.
    fn segment(&self, images: Vec<PyRef<'_, PyImage>>) -> PyResult<Vec<PyMask>> {
        let refs: Vec<&ImageGrid> = images.iter().map(|i| &i.inner).collect();
        let masks = segment_batch(&self.inner, Segmenter::Classifier, &refs).map_err(err)?;
        Ok(masks.into_iter().map(|m| PyMask { inner: m }).collect())
    }
}

/// Bidirectional LSTM over patch semantics.
#[pyclass(name = "SyntaxModel", module = "grammarscope")]
struct PySyntaxModel {
    inner: SyntaxModel,
}

fn masks(list: &[PyRef<'_, PyMask>]) -> Vec<LabelGrid> {
    list.iter().map(|m| m.inner.clone()).collect()
}

#[pymethods]
impl PySyntaxModel {
    /// `hidden` defaults to enc_dim + num_classes.
    #[new]
    #[pyo3(signature = (num_classes, seed=0, mask_res=64, enc_dim=128, hidden=None))]
    fn new(num_classes: usize, seed: u64, mask_res: usize, enc_dim: usize, hidden: Option<usize>) -> PyResult<Self> {
        let cfg = SyntaxConfig { num_classes, mask_res, enc_dim, hidden: hidden.unwrap_or(enc_dim + num_classes) };
        Ok(Self { inner: SyntaxModel::new(cfg, seed).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: SyntaxModel::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.config().num_classes
    }

    /// Trains on masks of correct images; the learning rate is multiplied
    /// by `gamma` after `step_after` epochs when given. Returns the loss
    /// per epoch.
    #[pyo3(signature = (masks, plan, epochs=15, lr=3e-3, batch_size=16, seed=0, step_after=None, gamma=0.1))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        masks: Vec<PyRef<'_, PyMask>>,
        plan: PyRef<'_, PyPlan>,
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
        step_after: Option<usize>,
        gamma: f64,
    ) -> PyResult<Vec<f64>> {
        let owned = self::masks(&masks);
        let refs: Vec<&LabelGrid> = owned.iter().collect();
        let schedule = step_after.map_or(LrSchedule::Constant, |after| LrSchedule::Step { after, gamma });
        let cfg = SyntaxTrainConfig { epochs, lr, schedule, batch_size, seed };
        train_syntax(&mut self.inner, &refs, &plan.inner, &cfg).map_err(err)
    }
}

/// Per-step modal masks and mean semantics over a set of correct masks.
#[pyclass(name = "AveragedSemantics", module = "grammarscope", frozen, skip_from_py_object)]
struct PyAveraged {
    inner: AveragedSemantics,
}

#[pymethods]
impl PyAveraged {
    #[new]
    fn new(masks: Vec<PyRef<'_, PyMask>>, plan: PyRef<'_, PyPlan>, num_classes: usize) -> PyResult<Self> {
        let refs: Vec<&LabelGrid> = masks.iter().map(|m| &m.inner).collect();
        Ok(Self { inner: averaged_semantics(&refs, &plan.inner, num_classes).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: AveragedSemantics::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    /// Mean semantics vector per step.
    fn semantics(&self) -> Vec<Vec<f64>> {
        self.inner.semantics.clone()
    }

    fn masks(&self) -> Vec<PyMask> {
        self.inner.masks.iter().map(|m| PyMask { inner: m.clone() }).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn scorer<'a>(method: Method, syntax: Option<&'a PySyntaxModel>, avg: Option<&'a PyAveraged>) -> PyResult<Scorer<'a>> {
    let need = |what: &str| PyValueError::new_err(format!("method {method} needs {what}"));
    Ok(match method {
        Method::Baseline => Scorer::Baseline(&syntax.ok_or_else(|| need("syntax"))?.inner),
        Method::AvgSemantics => {
            Scorer::AvgSemantics(&syntax.ok_or_else(|| need("syntax"))?.inner, &avg.ok_or_else(|| need("avg"))?.inner)
        }
        Method::Miou => Scorer::Miou(&avg.ok_or_else(|| need("avg"))?.inner),
    })
}

/// Scores masks with a grammar test: baseline and avg-semantics return
/// the prediction residual (higher is more suspicious), miou returns the
/// mean IoU against the averaged masks (lower is more suspicious).
#[pyfunction]
#[pyo3(signature = (method, masks, plan, syntax=None, avg=None))]
fn score(
    method: &str,
    masks: Vec<PyRef<'_, PyMask>>,
    plan: PyRef<'_, PyPlan>,
    syntax: Option<PyRef<'_, PySyntaxModel>>,
    avg: Option<PyRef<'_, PyAveraged>>,
) -> PyResult<Vec<f64>> {
    let method: Method = method.parse().map_err(err)?;
    let s = scorer(method, syntax.as_deref(), avg.as_deref())?;
    let refs: Vec<&LabelGrid> = masks.iter().map(|m| &m.inner).collect();
    Ok(s.score_masks(&refs, &plan.inner).map_err(err)?.into_iter().map(|s| s.score).collect())
}

/// Index of the copy judged most grammatical (ties to the lowest index).
#[pyfunction]
#[pyo3(signature = (method, copies, plan, syntax=None, avg=None))]
fn solve(
    method: &str,
    copies: Vec<PyRef<'_, PyMask>>,
    plan: PyRef<'_, PyPlan>,
    syntax: Option<PyRef<'_, PySyntaxModel>>,
    avg: Option<PyRef<'_, PyAveraged>>,
) -> PyResult<usize> {
    let method: Method = method.parse().map_err(err)?;
    let s = scorer(method, syntax.as_deref(), avg.as_deref())?;
    let refs: Vec<&LabelGrid> = copies.iter().map(|m| &m.inner).collect();
    solve_puzzle(&s, &refs, &plan.inner).map_err(err)
}

/// Decision threshold chosen on calibration scores.
#[pyclass(name = "Threshold", module = "grammarscope", frozen, skip_from_py_object)]
struct PyThreshold {
    inner: ThresholdModel,
}

#[pymethods]
impl PyThreshold {
    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    #[getter]
    fn balanced_accuracy(&self) -> f64 {
        self.inner.balanced_accuracy
    }

    /// True when `score` is judged corrupted.
    fn is_corrupted(&self, score: f64) -> bool {
        classify(score, &self.inner) == Verdict::Corrupted
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!("Threshold(tau={}, balanced_accuracy={})", self.inner.tau, self.inner.balanced_accuracy)
    }
}

/// Threshold maximizing balanced accuracy. `method` fixes the score
/// direction (baseline, avg-semantics or miou).
#[pyfunction]
fn calibrate(correct: Vec<f64>, corrupted: Vec<f64>, method: &str) -> PyResult<PyThreshold> {
    let method: Method = method.parse().map_err(err)?;
    Ok(PyThreshold { inner: calibrate_threshold(&correct, &corrupted, method.direction()).map_err(err)? })
}

/// Confusion counts, accuracy and recall (None without corrupted labels).
#[pyfunction]
fn metrics(predicted: Vec<bool>, labels: Vec<bool>) -> PyResult<(usize, usize, usize, usize, f64, Option<f64>)> {
    let verdicts: Vec<Verdict> = predicted.iter().map(|&p| if p { Verdict::Corrupted } else { Verdict::Correct }).collect();
    let r = detection_metrics(&verdicts, &labels).map_err(err)?;
    Ok((r.tp, r.tn, r.fp, r.fn_, r.accuracy, r.recall))
}

#[pymodule]
fn grammarscope(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyMask>()?;
    m.add_class::<PyPlan>()?;
    m.add_class::<PySegModel>()?;
    m.add_class::<PySyntaxModel>()?;
    m.add_class::<PyAveraged>()?;
    m.add_class::<PyThreshold>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(corrupt, m)?)?;
    m.add_function(wrap_pyfunction!(puzzle, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    Ok(())
}
