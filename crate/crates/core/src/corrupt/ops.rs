use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{Raster, Rect};

use super::patches::{check_rects, tiling, Layer, PatchGrid};
use super::CorruptError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Shuffle,
    Blackout,
    Blur,
    Puzzle,
}

/// Where the patches are: a regular tiling or an explicit list of rects.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    Grid { ps: usize },
    Rects { rects: Vec<Rect> },
}

impl Anchor {
    pub fn rects(&self, height: usize, width: usize) -> Result<Vec<Rect>, CorruptError> {
        match self {
            Anchor::Grid { ps } => tiling(height, width, *ps),
            Anchor::Rects { rects } => {
                check_rects(rects, height, width)?;
                Ok(rects.clone())
            }
        }
    }
}

/// What to do, before any randomness is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum CorruptionSpec {
    Shuffle { num_patch: usize },
    Blackout { num_patch: usize },
    Blur { num_patch: usize, kernel_size: usize, sigma: f64 },
    Puzzle { num_perm: usize },
}

impl CorruptionSpec {
    pub fn kind(&self) -> CorruptionKind {
        match self {
            CorruptionSpec::Shuffle { .. } => CorruptionKind::Shuffle,
            CorruptionSpec::Blackout { .. } => CorruptionKind::Blackout,
            CorruptionSpec::Blur { .. } => CorruptionKind::Blur,
            CorruptionSpec::Puzzle { .. } => CorruptionKind::Puzzle,
        }
    }

    /// Draws indices and permutations for a grid of `dims`.
    pub fn plan(&self, anchor: &Anchor, dims: (usize, usize), seed: u64) -> Result<CorruptionRecord, CorruptError> {
        let p = anchor.rects(dims.0, dims.1)?.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rec = CorruptionRecord {
            kind: self.kind(),
            anchor: anchor.clone(),
            indices: Vec::new(),
            perms: Vec::new(),
            kernel_size: None,
            sigma: None,
            seed,
        };
        match *self {
            CorruptionSpec::Shuffle { num_patch } => {
                check_count(num_patch, 2, p)?;
                rec.indices = sample_indices(p, num_patch, &mut rng);
                rec.perms = vec![cyclic_perm(p, &rec.indices)];
            }
            CorruptionSpec::Blackout { num_patch } => {
                check_count(num_patch, 1, p)?;
                rec.indices = sample_indices(p, num_patch, &mut rng);
            }
            CorruptionSpec::Blur { num_patch, kernel_size, sigma } => {
                check_count(num_patch, 1, p)?;
                gaussian_kernel(kernel_size, sigma)?;
                rec.indices = sample_indices(p, num_patch, &mut rng);
                rec.kernel_size = Some(kernel_size);
                rec.sigma = Some(sigma);
            }
            CorruptionSpec::Puzzle { num_perm } => {
                rec.perms = (0..num_perm)
                    .map(|_| {
                        let mut perm: Vec<usize> = (0..p).collect();
                        perm.shuffle(&mut rng);
                        perm
                    })
                    .collect();
            }
        }
        Ok(rec)
    }
}

fn check_count(num_patch: usize, min: usize, max: usize) -> Result<(), CorruptError> {
    if num_patch < min || num_patch > max {
        return Err(CorruptError::NumPatch { num_patch, min, max });
    }
    Ok(())
}

/// `num_patch` distinct indices in draw order. The draws do not depend on
/// `num_patch`, so a smaller sample is always a prefix of a larger one.
fn sample_indices(p: usize, num_patch: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..p).collect();
    let (picked, _) = all.partial_shuffle(rng, num_patch);
    picked.iter().rev().copied().collect()
}

/// Slot `indices[j]` receives patch `indices[(j + 1) % n]`.
fn cyclic_perm(p: usize, indices: &[usize]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..p).collect();
    for (j, &slot) in indices.iter().enumerate() {
        perm[slot] = indices[(j + 1) % indices.len()];
    }
    perm
}

/// Everything needed to reproduce a corruption without the RNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub kind: CorruptionKind,
    pub anchor: Anchor,
    pub indices: Vec<usize>,
    pub perms: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub seed: u64,
}

impl CorruptionRecord {
    fn validate(&self, p: usize) -> Result<(), CorruptError> {
        let bad = |m: String| Err(CorruptError::Record(m));
        let mut seen = vec![false; p];
        for &i in &self.indices {
            if i >= p || std::mem::replace(&mut seen[i], true) {
                return bad(format!("index {i} repeated or not below {p}"));
            }
        }
        for perm in &self.perms {
            let mut seen = vec![false; p];
            if perm.len() != p || perm.iter().any(|&i| i >= p || std::mem::replace(&mut seen[i], true)) {
                return bad(format!("{perm:?} is not a permutation of 0..{p}"));
            }
        }
        let ok = match self.kind {
            CorruptionKind::Shuffle => self.perms.len() == 1 && self.indices.len() >= 2,
            CorruptionKind::Blackout | CorruptionKind::Blur => self.perms.is_empty() && !self.indices.is_empty(),
            CorruptionKind::Puzzle => self.indices.is_empty(),
        };
        if !ok {
            return bad(format!("{:?} record with {} indices and {} perms", self.kind, self.indices.len(), self.perms.len()));
        }
        Ok(())
    }

    /// Applies the recorded corruption to every grid. The result is indexed
    /// `[grid][copy]`: one copy per grid, or for puzzles the original
    /// followed by one copy per permutation.
    pub fn apply(&self, grids: &[Layer]) -> Result<Vec<Vec<Layer>>, CorruptError> {
        let dims = grids.first().ok_or(CorruptError::Empty)?.dims();
        if let Some(g) = grids.iter().find(|g| g.dims() != dims) {
            return Err(CorruptError::Mismatch(dims, g.dims()));
        }
        let rects = self.anchor.rects(dims.0, dims.1)?;
        self.validate(rects.len())?;
        let kernel = match self.kind {
            CorruptionKind::Blur => {
                let (Some(k), Some(s)) = (self.kernel_size, self.sigma) else {
                    return Err(CorruptError::Record("blur record without kernel_size and sigma".into()));
                };
                Some((k, gaussian_kernel(k, s)?))
            }
            _ => None,
        };
        grids
            .iter()
            .map(|g| {
                Ok(match g {
                    Layer::Image(img) => self.apply_one(img, &rects, kernel.as_ref(), 0.0)?.into_iter().map(Layer::Image).collect(),
                    Layer::Mask(m) => self.apply_one(m, &rects, None, 0)?.into_iter().map(Layer::Mask).collect(),
                })
            })
            .collect()
    }

    fn apply_one<R: Raster>(
        &self,
        grid: &R,
        rects: &[Rect],
        kernel: Option<&(usize, Vec<f64>)>,
        zero: R::Elem,
    ) -> Result<Vec<R>, CorruptError>
    where
        R::Elem: Blurrable,
    {
        let base = PatchGrid::from_rects(grid, rects.to_vec())?;
        Ok(match self.kind {
            CorruptionKind::Shuffle => {
                let mut pg = base;
                pg.gather(&self.perms[0]);
                vec![pg.fold()]
            }
            CorruptionKind::Blackout => {
                let mut pg = base;
                for &i in &self.indices {
                    pg.patch_mut(i).fill(zero);
                }
                vec![pg.fold()]
            }
            CorruptionKind::Blur => {
                let mut pg = base;
                if let Some((size, k)) = kernel {
                    let (h, w) = pg.patch_dims();
                    let c = grid.channels();
                    for &i in &self.indices {
                        let blurred = blur_patch(pg.patch(i), h, w, c, k, *size);
                        *pg.patch_mut(i) = blurred;
                    }
                }
                vec![pg.fold()]
            }
            CorruptionKind::Puzzle => {
                let mut out = vec![grid.clone()];
                for perm in &self.perms {
                    let mut pg = base.clone();
                    pg.gather(perm);
                    out.push(pg.fold());
                }
                out
            }
        })
    }
}

/// Pixel types a blur can operate on. Label ids are never blurred.
pub(crate) trait Blurrable: Copy {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Blurrable for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        (v as f32).clamp(0.0, 1.0)
    }
}

impl Blurrable for u8 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(_: f64) -> Self {
        unreachable!("masks are not blurred")
    }
}

/// Normalized `size × size` Gaussian, row-major.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>, CorruptError> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(CorruptError::Kernel(format!("size {size} must be odd")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CorruptError::Kernel(format!("sigma {sigma} must be positive")));
    }
    let r = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size * size)
        .map(|i| {
            let dy = (i / size) as f64 - r;
            let dx = (i % size) as f64 - r;
            (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let z: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= z);
    Ok(k)
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

fn blur_patch<E: Blurrable>(patch: &[E], h: usize, w: usize, c: usize, kernel: &[f64], size: usize) -> Vec<E> {
    let r = (size / 2) as isize;
    let mut out = Vec::with_capacity(patch.len());
    for y in 0..h as isize {
        for x in 0..w as isize {
            for ch in 0..c {
                let mut acc = 0.0;
                for ky in 0..size as isize {
                    let sy = reflect(y + ky - r, h);
                    for kx in 0..size as isize {
                        let sx = reflect(x + kx - r, w);
                        acc += kernel[(ky as usize) * size + kx as usize] * patch[(sy * w + sx) * c + ch].to_f64();
                    }
                }
                out.push(E::from_f64(acc));
            }
        }
    }
    out
}

/// Plans and applies a corruption in one step.
pub fn corrupt(
    grids: &[Layer],
    spec: &CorruptionSpec,
    anchor: &Anchor,
    seed: u64,
) -> Result<(Vec<Vec<Layer>>, CorruptionRecord), CorruptError> {
    let dims = grids.first().ok_or(CorruptError::Empty)?.dims();
    let rec = spec.plan(anchor, dims, seed)?;
    Ok((rec.apply(grids)?, rec))
}

fn single(out: Vec<Vec<Layer>>) -> Vec<Layer> {
    out.into_iter().map(|mut copies| copies.remove(0)).collect()
}

pub fn shuffle_patches(grids: &[Layer], num_patch: usize, ps: usize, seed: u64) -> Result<Vec<Layer>, CorruptError> {
    Ok(single(corrupt(grids, &CorruptionSpec::Shuffle { num_patch }, &Anchor::Grid { ps }, seed)?.0))
}

/// Zeroes the selected patches; masks get class 0.
pub fn blackout_patches(grids: &[Layer], num_patch: usize, ps: usize, seed: u64) -> Result<Vec<Layer>, CorruptError> {
    Ok(single(corrupt(grids, &CorruptionSpec::Blackout { num_patch }, &Anchor::Grid { ps }, seed)?.0))
}

/// Blurs the selected image patches; masks pass through unchanged.
pub fn blur_patches(
    grids: &[Layer],
    num_patch: usize,
    ps: usize,
    kernel_size: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<Layer>, CorruptError> {
    let spec = CorruptionSpec::Blur { num_patch, kernel_size, sigma };
    Ok(single(corrupt(grids, &spec, &Anchor::Grid { ps }, seed)?.0))
}

/// Original plus `num_perm` fully permuted copies of each grid, `[grid][copy]`.
pub fn make_puzzles(grids: &[Layer], num_perm: usize, ps: usize, seed: u64) -> Result<Vec<Vec<Layer>>, CorruptError> {
    Ok(corrupt(grids, &CorruptionSpec::Puzzle { num_perm }, &Anchor::Grid { ps }, seed)?.0)
}

/// Independent per-item seed from a base seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorruptError> {
    let err = |msg: String| CorruptError::Jsonl { path: path.to_path_buf(), line: 0, msg };
    let file = fs::File::create(path).map_err(|e| err(e.to_string()))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| err(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorruptError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CorruptError::Jsonl { path: path.to_path_buf(), line: 0, msg: e.to_string() })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CorruptError::Jsonl { path: path.to_path_buf(), line: i + 1, msg: e.to_string() })
        })
        .collect()
}
