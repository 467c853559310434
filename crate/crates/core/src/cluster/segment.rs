use std::fmt::Write as _;
use std::path::Path;

use crate::data::{resize_image, resize_mask, ImageGrid, LabelGrid, Raster, Rect};

use super::kmeans::CentroidBank;
use super::model::{FeatureMap, SegModel};
use super::ClusterError;

/// How feature vectors become labels.
#[derive(Clone, Copy, Debug)]
pub enum Segmenter<'a> {
    /// Nearest centroid by cosine distance (one label per cluster).
    Centroids(&'a CentroidBank),
    /// Argmax of the model's classifier logits.
    Classifier,
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn labels_at_feature_res(model: &SegModel, how: Segmenter, images: &[&ImageGrid]) -> Result<(FeatureMap, usize, Vec<u8>), ClusterError> {
    let (fm, classes, labels) = match how {
        Segmenter::Centroids(bank) => {
            if bank.k() > LabelGrid::MAX_CLASSES {
                return Err(ClusterError::Config(format!("K={} exceeds {} labels", bank.k(), LabelGrid::MAX_CLASSES)));
            }
            let fm = model.features(images)?;
            let labels = bank.assign(&fm.features)?.into_iter().map(|k| k as u8).collect();
            (fm, bank.k(), labels)
        }
        Segmenter::Classifier => {
            let fm = model.logits(images)?;
            let labels = (0..fm.features.rows()).map(|r| argmax(fm.features.row(r)) as u8).collect();
            (fm, model.num_classes(), labels)
        }
    };
    Ok((fm, classes, labels))
}

/// Segments equally sized images; labels are upsampled (nearest) to the
/// input resolution.
pub fn segment_batch(model: &SegModel, how: Segmenter, images: &[&ImageGrid]) -> Result<Vec<LabelGrid>, ClusterError> {
    let (fm, classes, labels) = labels_at_feature_res(model, how, images)?;
    let per = fm.height * fm.width;
    let (h, w) = images[0].dims();
    labels
        .chunks(per)
        .map(|chunk| {
            let small = LabelGrid::new(fm.height, fm.width, classes, chunk.to_vec())?;
            Ok(resize_mask(&small, h, w)?)
        })
        .collect()
}

pub fn segment(model: &SegModel, how: Segmenter, image: &ImageGrid) -> Result<LabelGrid, ClusterError> {
    Ok(segment_batch(model, how, &[image])?.remove(0))
}

/// Segments each rect of `image` independently: crop, resize to
/// `res × res`, classify, and resize the labels back to the rect size.
pub fn segment_patches(model: &SegModel, image: &ImageGrid, rects: &[Rect], res: usize) -> Result<Vec<LabelGrid>, ClusterError> {
    let crops = rects
        .iter()
        .map(|&r| Ok(resize_image(&image.crop(r)?, res, res)?))
        .collect::<Result<Vec<_>, ClusterError>>()?;
    let refs: Vec<&ImageGrid> = crops.iter().collect();
    let masks = segment_batch(model, Segmenter::Classifier, &refs)?;
    rects
        .iter()
        .zip(masks)
        .map(|(r, m)| Ok(resize_mask(&m, r.height, r.width)?))
        .collect()
}

/// Total map from K cluster ids onto C classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterMergeMap {
    map: Vec<u8>,
    num_classes: usize,
}

impl ClusterMergeMap {
    pub fn new(map: Vec<u8>, num_classes: usize) -> Result<Self, ClusterError> {
        if map.is_empty() || num_classes == 0 || num_classes > LabelGrid::MAX_CLASSES {
            return Err(ClusterError::Config(format!("merge map of {} clusters onto {num_classes} classes", map.len())));
        }
        if let Some(&c) = map.iter().find(|&&c| c as usize >= num_classes) {
            return Err(ClusterError::Config(format!("class {c} out of range for {num_classes} classes")));
        }
        Ok(Self { map, num_classes })
    }

    pub fn identity(k: usize) -> Result<Self, ClusterError> {
        Self::new((0..k).map(|c| c as u8).collect(), k)
    }

    pub fn num_clusters(&self) -> usize {
        self.map.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_of(&self, cluster: usize) -> u8 {
        self.map[cluster]
    }

    /// Parses `<cluster-id> <class-id>` lines; `#` starts a comment. Every
    /// cluster in `0..K` must appear exactly once.
    pub fn parse(text: &str, num_classes: usize) -> Result<Self, ClusterError> {
        let mut pairs: Vec<(usize, u8)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || ClusterError::Config(format!("merge map line {}: '{line}'", i + 1));
            let mut it = line.split_whitespace();
            let k: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let c: u8 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if it.next().is_some() {
                return Err(bad());
            }
            pairs.push((k, c));
        }
        let k = pairs.len();
        let mut map = vec![None; k];
        for (cluster, class) in pairs {
            match map.get_mut(cluster) {
                Some(slot @ None) => *slot = Some(class),
                _ => return Err(ClusterError::Config(format!("cluster {cluster} repeated or outside 0..{k}"))),
            }
        }
        Self::new(map.into_iter().map(|c| c.expect("all filled")).collect(), num_classes)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, c) in self.map.iter().enumerate() {
            writeln!(s, "{k} {c}").expect("string write");
        }
        s
    }

    pub fn load(path: &Path, num_classes: usize) -> Result<Self, ClusterError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClusterError::io(path, e))?;
        Self::parse(&text, num_classes)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClusterError> {
        std::fs::write(path, self.to_text()).map_err(|e| ClusterError::io(path, e))
    }

    /// Maps each cluster to the class it overlaps most in `(clusters,
    /// classes)` pairs. Ties and unseen clusters go to the lowest class id.
    pub fn by_majority(pairs: &[(&LabelGrid, &LabelGrid)], k: usize, num_classes: usize) -> Result<Self, ClusterError> {
        let mut counts = vec![0usize; k * num_classes];
        for (clusters, classes) in pairs {
            if clusters.dims() != classes.dims() {
                return Err(ClusterError::Config("cluster and class maps differ in dims".into()));
            }
            for (&a, &b) in clusters.data().iter().zip(classes.data()) {
                if a as usize >= k || b as usize >= num_classes {
                    return Err(ClusterError::Config(format!("pair ({a}, {b}) outside {k}x{num_classes}")));
                }
                counts[a as usize * num_classes + b as usize] += 1;
            }
        }
        let map = (0..k)
            .map(|c| {
                let row = &counts[c * num_classes..(c + 1) * num_classes];
                (0..num_classes).fold(0, |best, j| if row[j] > row[best] { j } else { best }) as u8
            })
            .collect();
        Self::new(map, num_classes)
    }
}

/// Relabels each pixel through the merge map.
pub fn merge_clusters(grid: &LabelGrid, map: &ClusterMergeMap) -> Result<LabelGrid, ClusterError> {
    if grid.num_classes() > map.num_clusters() {
        return Err(ClusterError::Config(format!(
            "grid has {} clusters, map covers {}",
            grid.num_classes(),
            map.num_clusters()
        )));
    }
    Ok(grid.relabel(&map.map, map.num_classes)?)
}
