use std::sync::Arc;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    geometric, resize_image, resize_mask, scale_geometric, ColorJitter, GeometricSpec, ImageGrid, LabelGrid,
    PhotometricParams, Raster, Rect,
};
use crate::numcore::{adam_step, Adam, DenseArray, Graph, ParamStore};

use super::kmeans::{minibatch_kmeans, CentroidBank, KmeansInit};
use super::losses::picie_graph;
use super::model::{check_batch, classifier_graph, cross_entropy_graph, extractor_graph, FeatureMap, SegModel, STRIDE};
use super::ClusterError;

/// Supervised cross-entropy training schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    fn check(&self) -> Result<(), ClusterError> {
        if self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ClusterError::Config(format!("batch size {} and lr {}", self.batch_size, self.lr)));
        }
        Ok(())
    }
}

/// Mask downsampled to feature resolution, one label per feature row.
pub fn feature_labels(mask: &LabelGrid) -> Result<Vec<u8>, ClusterError> {
    let (h, w) = mask.dims();
    Ok(resize_mask(mask, h / STRIDE, w / STRIDE)?.data().to_vec())
}

/// Mean pixel-wise cross-entropy of the model on `(image, mask)` pairs.
pub fn cross_entropy(model: &SegModel, samples: &[(&ImageGrid, &LabelGrid)]) -> Result<f64, ClusterError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(64) {
        let (loss, n) = ce_batch(model, chunk, false)?.0;
        total += loss * n as f64;
        count += n;
    }
    Ok(total / count.max(1) as f64)
}

type BatchOut = ((f64, usize), Option<crate::numcore::Gradients<f32>>);

fn ce_batch(model: &SegModel, batch: &[(&ImageGrid, &LabelGrid)], grads: bool) -> Result<BatchOut, ClusterError> {
    let images: Vec<&ImageGrid> = batch.iter().map(|s| s.0).collect();
    let (h, w) = check_batch(&images)?;
    let mut labels = Vec::with_capacity(batch.len() * (h / STRIDE) * (w / STRIDE));
    for (_, m) in batch {
        if m.num_classes() != model.num_classes() {
            return Err(ClusterError::Config(format!(
                "mask has {} classes, classifier has {}",
                m.num_classes(),
                model.num_classes()
            )));
        }
        if m.dims() != (h, w) {
            return Err(ClusterError::Config(format!("mask dims {:?} differ from image dims {:?}", m.dims(), (h, w))));
        }
        labels.extend(feature_labels(m)?);
    }
    let mut g = Graph::<f32>::new();
    let x = g.input("images");
    let f = extractor_graph(&mut g, x, images.len(), h, w);
    let logits = classifier_graph(&mut g, f);
    cross_entropy_graph(&mut g, logits, &labels, model.num_classes());
    let input = super::model::batch_input(&images);
    let loss = g.forward(&(&model.params, &input))?.item().expect("scalar") as f64;
    let gr = if grads { Some(g.backward()?) } else { None };
    Ok(((loss, labels.len()), gr))
}

/// Adam on mean pixel-wise cross-entropy; returns the mean loss per epoch.
fn train_ce(model: &mut SegModel, samples: &[(&ImageGrid, &LabelGrid)], cfg: &TrainConfig) -> Result<Vec<f64>, ClusterError> {
    if samples.is_empty() {
        return Err(ClusterError::Empty("training set".into()));
    }
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = idx.iter().map(|&i| samples[i]).collect();
            let ((loss, n), grads) = ce_batch(model, &batch, true)?;
            adam_step(&mut model.params, &grads.expect("requested"), &mut adam)?;
            total += loss * n as f64;
            count += n;
        }
        let mean = total / count as f64;
        info!("epoch {} cross-entropy {:.6}", epoch + 1, mean);
        log.push(mean);
    }
    Ok(log)
}

/// Supervised fine-tuning of extractor and classifier on a labeled subset.
pub fn finetune_prior(
    model: &mut SegModel,
    samples: &[(&ImageGrid, &LabelGrid)],
    cfg: &TrainConfig,
) -> Result<Vec<f64>, ClusterError> {
    train_ce(model, samples, cfg)
}

/// Crops every rect from each `(image, mask)` pair and resizes the crops to
/// `res × res` (bilinear for images, nearest for masks).
pub fn patch_pairs(
    samples: &[(&ImageGrid, &LabelGrid)],
    rects: &[Rect],
    res: usize,
) -> Result<Vec<(ImageGrid, LabelGrid)>, ClusterError> {
    let mut out = Vec::with_capacity(samples.len() * rects.len());
    for (img, mask) in samples {
        for &r in rects {
            out.push((resize_image(&img.crop(r)?, res, res)?, resize_mask(&mask.crop(r)?, res, res)?));
        }
    }
    Ok(out)
}

/// Fine-tunes on patch crops supervised by stage-1 mask crops.
pub fn finetune_patch_detector(
    model: &mut SegModel,
    patches: &[(&ImageGrid, &LabelGrid)],
    cfg: &TrainConfig,
) -> Result<Vec<f64>, ClusterError> {
    train_ce(model, patches, cfg)
}

/// Two-stream PiCIE schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicieConfig {
    pub k: usize,
    /// Batches collected before the first clustering.
    pub km_init: usize,
    /// Batches between re-clusterings.
    pub km_num: usize,
    /// K-means iterations per clustering.
    pub km_iter: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Photometric jitter for both streams.
    pub jitter: PhotometricParams,
    /// Random crop and flip on the second stream.
    pub geometric: bool,
    /// Smallest crop side as a fraction of the image side.
    pub crop_min: f64,
    /// Feature rows per image kept for clustering (0 keeps all).
    pub km_sample: usize,
}

impl PicieConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            k: 20,
            km_init: 20,
            km_num: 20,
            km_iter: 100,
            epochs: 10,
            lr: 1e-4,
            batch_size: 256,
            seed,
            jitter: PhotometricParams { gain: 0.1, bias: 0.1 },
            geometric: true,
            crop_min: 0.5,
            km_sample: 0,
        }
    }

    fn check(&self) -> Result<(), ClusterError> {
        if self.km_init < 1 || self.km_num < 1 {
            return Err(ClusterError::Config(format!("km_init {} and km_num {} must be at least 1", self.km_init, self.km_num)));
        }
        if self.k < 1 || self.batch_size == 0 || !(self.lr > 0.0) || !(0.0 < self.crop_min && self.crop_min <= 1.0) {
            return Err(ClusterError::Config("k, batch_size, lr and crop_min must be positive (crop_min <= 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicieEpoch {
    pub epoch: usize,
    pub within: f64,
    pub cross: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicieOutcome {
    /// Centroids of the first (untransformed geometry) stream, used for segmentation.
    pub centroids: CentroidBank,
    pub centroids2: CentroidBank,
    pub log: Vec<PicieEpoch>,
}

/// Views of one batch: jittered originals, jittered and cropped/flipped
/// copies, and the stream-1 feature rows aligned with stream-2 features.
struct Views {
    first: Vec<ImageGrid>,
    second: Vec<ImageGrid>,
    align: Arc<[u32]>,
}

fn draw_views(images: &[&ImageGrid], cfg: &PicieConfig, rng: &mut ChaCha8Rng) -> Result<Views, ClusterError> {
    let (h, w) = check_batch(images)?;
    let (ch, cw) = if cfg.geometric {
        let side = |n: usize, rng: &mut ChaCha8Rng| {
            let lo = ((n as f64 * cfg.crop_min).ceil() as usize).div_ceil(STRIDE).max(1);
            rng.gen_range(lo..=n / STRIDE) * STRIDE
        };
        (side(h, rng), side(w, rng))
    } else {
        (h, w)
    };
    let (fh, fw) = (h / STRIDE, w / STRIDE);
    let mut views = Views { first: Vec::new(), second: Vec::new(), align: Arc::from(Vec::new()) };
    let mut align = Vec::with_capacity(images.len() * (ch / STRIDE) * (cw / STRIDE));
    for (b, img) in images.iter().enumerate() {
        let p1 = ColorJitter::sample(cfg.jitter, rng);
        let p2 = ColorJitter::sample(cfg.jitter, rng);
        let spec = if cfg.geometric {
            let top = rng.gen_range(0..=(h - ch) / STRIDE) * STRIDE;
            let left = rng.gen_range(0..=(w - cw) / STRIDE) * STRIDE;
            GeometricSpec { rect: Rect::new(top, left, ch, cw), flip: rng.gen() }
        } else {
            GeometricSpec::full_frame(h, w)
        };
        views.first.push(p1.apply(img));
        views.second.push(geometric(&p2.apply(img), &spec)?);
        let fs = scale_geometric(&spec, 1.0 / STRIDE as f64);
        for y in 0..fs.rect.height {
            for x in 0..fs.rect.width {
                let sx = if fs.flip { fs.rect.width - 1 - x } else { x };
                align.push((b * fh * fw + (fs.rect.top + y) * fw + fs.rect.left + sx) as u32);
            }
        }
    }
    views.align = align.into();
    Ok(views)
}

/// Features of both streams: `z1` is stream-1 features cropped/flipped
/// into alignment with `z2`.
pub fn two_stream_features(
    model: &SegModel,
    image: &ImageGrid,
    p1: &ColorJitter,
    p2: &ColorJitter,
    g2: &GeometricSpec,
) -> Result<(FeatureMap, FeatureMap), ClusterError> {
    let f1 = model.features(&[&p1.apply(image)])?;
    let second = geometric(&p2.apply(image), g2)?;
    let z2 = model.features(&[&second])?;
    let fs = scale_geometric(g2, 1.0 / STRIDE as f64);
    if (fs.rect.height, fs.rect.width) != (z2.height, z2.width) || !fs.rect.fits(f1.height, f1.width) {
        return Err(ClusterError::Config(format!(
            "scaled crop {:?} does not match {}x{} features",
            fs.rect, z2.height, z2.width
        )));
    }
    let d = f1.dim();
    let mut data = Vec::with_capacity(z2.features.len());
    for y in 0..fs.rect.height {
        for x in 0..fs.rect.width {
            let sx = if fs.flip { fs.rect.width - 1 - x } else { x };
            data.extend_from_slice(f1.features.row((fs.rect.top + y) * f1.width + fs.rect.left + sx));
        }
    }
    let z1 = FeatureMap {
        height: fs.rect.height,
        width: fs.rect.width,
        features: DenseArray::new(vec![data.len() / d, d], data)?,
    };
    Ok((z1, z2))
}

fn sample_rows(z: &DenseArray<f32>, per_image: usize, images: usize, rng: &mut ChaCha8Rng) -> DenseArray<f32> {
    let rows_per = z.rows() / images;
    if per_image == 0 || per_image >= rows_per {
        return z.clone();
    }
    let d = z.cols();
    let mut data = Vec::with_capacity(images * per_image * d);
    for b in 0..images {
        for r in rand::seq::index::sample(rng, rows_per, per_image).into_vec() {
            data.extend_from_slice(z.row(b * rows_per + r));
        }
    }
    DenseArray::new(vec![images * per_image, d], data).expect("dims")
}

/// Forward pass of both streams; returns `(z1, z2)`.
fn stream_features(model: &SegModel, views: &Views) -> Result<(DenseArray<f32>, DenseArray<f32>), ClusterError> {
    let first: Vec<&ImageGrid> = views.first.iter().collect();
    let second: Vec<&ImageGrid> = views.second.iter().collect();
    let f1 = model.features(&first)?;
    let z2 = model.features(&second)?;
    let d = f1.dim();
    let mut data = Vec::with_capacity(views.align.len() * d);
    for &r in views.align.iter() {
        data.extend_from_slice(f1.features.row(r as usize));
    }
    Ok((DenseArray::new(vec![views.align.len(), d], data)?, z2.features))
}

/// PiCIE training: cluster both streams, then minimize within + cross
/// DeepCluster losses, re-clustering every `km_num` batches.
pub fn train_picie(model: &mut SegModel, images: &[&ImageGrid], cfg: &PicieConfig) -> Result<PicieOutcome, ClusterError> {
    cfg.check()?;
    if images.is_empty() {
        return Err(ClusterError::Empty("training set".into()));
    }
    check_batch(images)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let batch_of = |idx: &[usize]| -> Vec<&ImageGrid> { idx.iter().map(|&i| images[i]).collect() };

    // Initial clustering over km_init batches, cycling through the data.
    let mut buf1 = Vec::new();
    let mut buf2 = Vec::new();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    for _ in 0..cfg.km_init {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch = batch_of(&order[cursor..end]);
        cursor = end;
        let views = draw_views(&batch, cfg, &mut rng)?;
        let (z1, z2) = stream_features(model, &views)?;
        buf1.push(sample_rows(&z1, cfg.km_sample, batch.len(), &mut rng));
        buf2.push(sample_rows(&z2, cfg.km_sample, batch.len(), &mut rng));
    }
    let seed1 = rng.gen();
    let seed2 = rng.gen();
    let cluster = |buf: &[DenseArray<f32>], init: KmeansInit| -> Result<CentroidBank, ClusterError> {
        let refs: Vec<&DenseArray<f32>> = buf.iter().collect();
        let r = minibatch_kmeans(&refs, cfg.k, &init, cfg.km_iter)?;
        debug!("k-means: {} iterations, objective {:.4}", r.iterations, r.objective.last().unwrap());
        Ok(r.centroids)
    };
    let mut mu1 = cluster(&buf1, KmeansInit::PlusPlus { seed: seed1 })?;
    let mut mu2 = cluster(&buf2, KmeansInit::PlusPlus { seed: seed2 })?;
    buf1.clear();
    buf2.clear();

    let mut adam = Adam::new(cfg.lr);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut since = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut within, mut cross, mut total, mut n) = (0.0, 0.0, 0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let batch = batch_of(idx);
            let views = draw_views(&batch, cfg, &mut rng)?;
            let (h, w) = batch[0].dims();
            let (ch, cw) = views.second[0].dims();

            let mut g = Graph::<f32>::new();
            let x1 = g.input("images1");
            let x2 = g.input("images2");
            let f1 = extractor_graph(&mut g, x1, batch.len(), h, w);
            let d = model.feature_dim();
            let elems: Arc<[u32]> =
                views.align.iter().flat_map(|&r| (0..d as u32).map(move |j| r * d as u32 + j)).collect();
            let z1 = g.gather(f1, elems, vec![views.align.len(), d]);
            let z2 = extractor_graph(&mut g, x2, batch.len(), ch, cw);
            g.set_output(z2);
            let mut inputs = ParamStore::new();
            let first: Vec<&ImageGrid> = views.first.iter().collect();
            let second: Vec<&ImageGrid> = views.second.iter().collect();
            inputs.insert("images1", super::model::batch_input(&first).get("images").unwrap().clone());
            inputs.insert("images2", super::model::batch_input(&second).get("images").unwrap().clone());
            g.forward(&(&model.params, &inputs))?;
            let v1 = g.value(z1).expect("evaluated").clone();
            let v2 = g.value(z2).expect("evaluated").clone();
            let y1 = mu1.assign(&v1)?;
            let y2 = mu2.assign(&v2)?;
            let nodes = picie_graph(&mut g, z1, z2, &y1, &y2, mu1.as_array(), mu2.as_array())?;
            g.forward(&(&model.params, &inputs))?;
            let val = |id| g.value(id).and_then(|v| v.item()).expect("scalar") as f64;
            let m = batch.len();
            within += val(nodes.within) * m as f64;
            cross += val(nodes.cross) * m as f64;
            total += val(nodes.total) * m as f64;
            n += m;
            let grads = g.backward()?;
            adam_step(&mut model.params, &grads, &mut adam)?;

            buf1.push(sample_rows(&v1, cfg.km_sample, m, &mut rng));
            buf2.push(sample_rows(&v2, cfg.km_sample, m, &mut rng));
            since += 1;
            if since == cfg.km_num {
                mu1 = cluster(&buf1, KmeansInit::Given(mu1.clone()))?;
                mu2 = cluster(&buf2, KmeansInit::Given(mu2.clone()))?;
                buf1.clear();
                buf2.clear();
                since = 0;
            }
        }
        let e = PicieEpoch { epoch: epoch + 1, within: within / n as f64, cross: cross / n as f64, total: total / n as f64 };
        info!("epoch {} within {:.6} cross {:.6} total {:.6}", e.epoch, e.within, e.cross, e.total);
        log.push(e);
    }
    if since > 0 {
        mu1 = cluster(&buf1, KmeansInit::Given(mu1.clone()))?;
        mu2 = cluster(&buf2, KmeansInit::Given(mu2.clone()))?;
    }
    Ok(PicieOutcome { centroids: mu1, centroids2: mu2, log })
}
