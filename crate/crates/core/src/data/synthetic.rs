//! Procedural face-like and room-like datasets with a fixed part grammar.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry};
use super::pnm::{save_image, save_mask};
use super::{DataError, ImageGrid, LabelGrid, Rect};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Face,
    Room,
}

impl Family {
    pub fn num_classes(self) -> usize {
        match self {
            Family::Face => 7,
            Family::Room => 13,
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Family::Face => &["background", "hair", "skin", "eyes", "nose", "mouth", "neck"],
            Family::Room => &[
                "wall", "ceiling", "floor", "window", "picture", "tv", "furniture", "books", "table", "chair", "sofa",
                "bed", "objects",
            ],
        }
    }

    /// Top-to-bottom order of the parts that dominate image rows.
    pub fn row_grammar(self) -> &'static [u8] {
        match self {
            Family::Face => &[1, 3, 4, 5],
            Family::Room => &[1, 0, 2],
        }
    }

    pub fn default_palette(self) -> Vec<[f32; 3]> {
        match self {
            Family::Face => vec![
                [0.80, 0.85, 0.90],
                [0.28, 0.18, 0.10],
                [0.92, 0.76, 0.62],
                [0.20, 0.40, 0.75],
                [0.78, 0.50, 0.40],
                [0.72, 0.16, 0.22],
                [0.62, 0.66, 0.40],
            ],
            Family::Room => vec![
                [0.85, 0.82, 0.72],
                [0.96, 0.96, 0.94],
                [0.45, 0.32, 0.20],
                [0.55, 0.78, 0.95],
                [0.85, 0.35, 0.25],
                [0.10, 0.10, 0.12],
                [0.60, 0.45, 0.30],
                [0.30, 0.55, 0.30],
                [0.70, 0.55, 0.35],
                [0.35, 0.25, 0.55],
                [0.40, 0.50, 0.70],
                [0.90, 0.70, 0.80],
                [0.95, 0.80, 0.20],
            ],
        }
    }

    fn parts(self) -> &'static [Part] {
        match self {
            Family::Face => FACE_PARTS,
            Family::Room => ROOM_PARTS,
        }
    }

    /// Canonical landmark centres as fractions of (height, width).
    fn landmarks(self) -> &'static [(f64, f64)] {
        match self {
            // left eye, right eye, left mouth corner, right mouth corner, nose
            Family::Face => &[(0.44, 0.25), (0.44, 0.75), (0.73, 0.25), (0.73, 0.75), (0.58, 0.5)],
            Family::Room => &[],
        }
    }
}

/// Edges pinned to the canvas border regardless of jitter.
const TOP: u8 = 1;
const BOTTOM: u8 = 2;
const LEFT: u8 = 4;
const RIGHT: u8 = 8;

/// A painted rectangle in fractional coordinates `(y0, y1, x0, x1)`.
struct Part {
    class: u8,
    frac: (f64, f64, f64, f64),
    pinned: u8,
}

const fn part(class: u8, y0: f64, y1: f64, x0: f64, x1: f64, pinned: u8) -> Part {
    Part { class, frac: (y0, y1, x0, x1), pinned }
}

// Painted in order; later parts cover earlier ones. The fringe sits on the
// left only, so mirrored eye patches are distinguishable.
const FACE_PARTS: &[Part] = &[
    part(6, 0.80, 1.00, 0.34, 0.66, BOTTOM),
    part(2, 0.14, 0.84, 0.14, 0.86, 0),
    part(1, 0.00, 0.24, 0.00, 1.00, TOP | LEFT | RIGHT),
    part(1, 0.00, 0.36, 0.00, 0.30, TOP | LEFT),
    part(3, 0.39, 0.49, 0.16, 0.37, 0),
    part(3, 0.39, 0.49, 0.63, 0.84, 0),
    part(4, 0.51, 0.65, 0.30, 0.70, 0),
    part(5, 0.68, 0.78, 0.25, 0.75, 0),
];

const ROOM_PARTS: &[Part] = &[
    part(1, 0.00, 0.20, 0.00, 1.00, TOP | LEFT | RIGHT),
    part(2, 0.68, 1.00, 0.00, 1.00, BOTTOM | LEFT | RIGHT),
    part(3, 0.26, 0.52, 0.06, 0.28, 0),
    part(4, 0.28, 0.42, 0.40, 0.56, 0),
    part(6, 0.50, 0.80, 0.62, 0.80, 0),
    part(5, 0.40, 0.50, 0.64, 0.78, 0),
    part(7, 0.56, 0.64, 0.64, 0.78, 0),
    part(10, 0.58, 0.84, 0.04, 0.34, 0),
    part(8, 0.72, 0.82, 0.40, 0.58, 0),
    part(12, 0.66, 0.72, 0.44, 0.52, 0),
    part(9, 0.62, 0.88, 0.84, 0.96, 0),
    part(11, 0.86, 0.96, 0.40, 0.70, 0),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: Family,
    pub height: usize,
    pub width: usize,
    /// Per-part translation jitter in pixels.
    pub position_jitter: usize,
    /// Per-part, per-channel colour offset amplitude.
    pub color_jitter: f32,
    /// Per-pixel uniform noise amplitude.
    pub pixel_noise: f32,
    pub palette: Vec<[f32; 3]>,
    pub samples: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(family: Family, height: usize, width: usize, samples: usize, seed: u64) -> Self {
        Self {
            family,
            height,
            width,
            position_jitter: 2,
            color_jitter: 0.06,
            pixel_noise: 0.03,
            palette: family.default_palette(),
            samples,
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.family.num_classes()
    }

    fn px(&self, f: f64, len: usize) -> i64 {
        (f * len as f64).round() as i64
    }

    fn base_rect(&self, p: &Part) -> (i64, i64, i64, i64) {
        let (y0, y1, x0, x1) = p.frac;
        (self.px(y0, self.height), self.px(y1, self.height), self.px(x0, self.width), self.px(x1, self.width))
    }

    /// Canonical landmark centres in pixels, as `(row, col)`.
    pub fn anchors(&self) -> Vec<(usize, usize)> {
        self.family
            .landmarks()
            .iter()
            .map(|&(fy, fx)| (self.px(fy, self.height) as usize, self.px(fx, self.width) as usize))
            .collect()
    }

    /// Square landmark rectangles of side `ps`.
    pub fn landmark_rects(&self, ps: usize) -> Result<Vec<Rect>, DataError> {
        self.anchors()
            .into_iter()
            .map(|(cy, cx)| {
                Rect::centered(cy, cx, ps)
                    .filter(|r| r.fits(self.height, self.width))
                    .ok_or_else(|| DataError::Spec(format!("landmark ({cy},{cx}) with size {ps} leaves the canvas")))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.height < 8 || self.width < 8 {
            return Err(DataError::Spec(format!("canvas {}x{} is too small", self.height, self.width)));
        }
        if self.palette.len() != self.num_classes() {
            return Err(DataError::Spec(format!("palette has {} colours for {} classes", self.palette.len(), self.num_classes())));
        }
        if !(0.0..=0.5).contains(&self.color_jitter) || !(0.0..=0.5).contains(&self.pixel_noise) {
            return Err(DataError::Spec("colour jitter and pixel noise must lie in [0, 0.5]".into()));
        }
        let j = self.position_jitter as i64;
        let (h, w) = (self.height as i64, self.width as i64);
        for p in self.family.parts() {
            let (y0, y1, x0, x1) = self.base_rect(p);
            let free_inside = |lo: i64, hi: i64, len: i64, lo_pin: bool, hi_pin: bool| {
                (lo_pin || lo - j >= 0) && (hi_pin || hi + j <= len) && hi > lo
            };
            if !free_inside(y0, y1, h, p.pinned & TOP != 0, p.pinned & BOTTOM != 0)
                || !free_inside(x0, x1, w, p.pinned & LEFT != 0, p.pinned & RIGHT != 0)
            {
                return Err(DataError::Spec(format!(
                    "part of class {} can leave the canvas with jitter {} at {}x{}",
                    p.class, self.position_jitter, self.height, self.width
                )));
            }
        }
        // Vertical order of the grammar parts must survive the worst-case jitter.
        let centres: Vec<i64> = self
            .family
            .parts()
            .iter()
            .filter(|p| p.pinned == 0)
            .map(|p| {
                let (y0, y1, _, _) = self.base_rect(p);
                (y0 + y1) / 2
            })
            .collect();
        if self.family == Family::Face {
            let (eye, nose, mouth) = (centres[1], centres[3], centres[4]);
            if nose - eye <= 2 * j || mouth - nose <= 2 * j {
                return Err(DataError::Spec(format!("jitter {} can reorder facial parts", self.position_jitter)));
            }
        }
        Ok(())
    }
}

/// One generated image with its ground-truth mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: ImageGrid,
    pub mask: LabelGrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub samples: Vec<Sample>,
}

/// Generates `spec.samples` samples; sample `i` is drawn from seed `spec.seed + i`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset, DataError> {
    spec.validate()?;
    let samples = (0..spec.samples).map(|i| generate_sample(spec, i as u64)).collect::<Result<_, _>>()?;
    Ok(SyntheticDataset { spec: spec.clone(), samples })
}

/// Generates the single sample with index `index`.
pub fn generate_sample(spec: &SyntheticSpec, index: u64) -> Result<Sample, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(index));
    let (h, w) = (spec.height, spec.width);
    let c = spec.num_classes();
    let j = spec.position_jitter as i64;
    let mut labels = vec![0u8; h * w];
    let mut colors: Vec<[f32; 3]> = spec.palette.clone();
    // Per-class colour offsets are drawn once per sample.
    for col in colors.iter_mut() {
        for ch in col.iter_mut() {
            if spec.color_jitter > 0.0 {
                *ch = (*ch + rng.gen_range(-spec.color_jitter..=spec.color_jitter)).clamp(0.0, 1.0);
            }
        }
    }
    for p in spec.family.parts() {
        let (dy, dx) = if j > 0 { (rng.gen_range(-j..=j), rng.gen_range(-j..=j)) } else { (0, 0) };
        let (mut y0, mut y1, mut x0, mut x1) = spec.base_rect(p);
        y0 += dy;
        y1 += dy;
        x0 += dx;
        x1 += dx;
        if p.pinned & TOP != 0 {
            y0 = 0;
        }
        if p.pinned & BOTTOM != 0 {
            y1 = h as i64;
        }
        if p.pinned & LEFT != 0 {
            x0 = 0;
        }
        if p.pinned & RIGHT != 0 {
            x1 = w as i64;
        }
        let (y0, y1) = (y0.clamp(0, h as i64) as usize, y1.clamp(0, h as i64) as usize);
        let (x0, x1) = (x0.clamp(0, w as i64) as usize, x1.clamp(0, w as i64) as usize);
        for y in y0..y1 {
            labels[y * w + x0..y * w + x1].fill(p.class);
        }
    }
    let mut data = Vec::with_capacity(h * w * 3);
    for &l in &labels {
        for ch in 0..3 {
            let noise = if spec.pixel_noise > 0.0 { rng.gen_range(-spec.pixel_noise..=spec.pixel_noise) } else { 0.0 };
            data.push((colors[l as usize][ch] + noise).clamp(0.0, 1.0));
        }
    }
    Ok(Sample { image: ImageGrid::new(h, w, data)?, mask: LabelGrid::new(h, w, c, labels)? })
}

/// Metadata written next to generated splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub spec: SyntheticSpec,
    pub class_names: Vec<String>,
    pub anchors: Vec<(usize, usize)>,
    pub splits: Vec<(String, usize)>,
}

impl SyntheticDataset {
    /// Writes samples `range` as `<dir>/images/<name>.ppm` and
    /// `<dir>/masks/<name>.pgm` plus a manifest `<dir>/<split>.txt`.
    pub fn write_split(&self, dir: &Path, split: &str, range: std::ops::Range<usize>) -> Result<DatasetManifest, DataError> {
        let img_dir = dir.join("images");
        let mask_dir = dir.join("masks");
        std::fs::create_dir_all(&img_dir).map_err(|e| DataError::io(&img_dir, e))?;
        std::fs::create_dir_all(&mask_dir).map_err(|e| DataError::io(&mask_dir, e))?;
        let mut entries = Vec::with_capacity(range.len());
        for i in range {
            let s = self.samples.get(i).ok_or_else(|| DataError::Spec(format!("sample {i} not generated")))?;
            let name = format!("{i:06}");
            let img = img_dir.join(format!("{name}.ppm"));
            let mask = mask_dir.join(format!("{name}.pgm"));
            save_image(&s.image, &img)?;
            save_mask(&s.mask, &mask)?;
            entries.push(ManifestEntry { image: img, mask: Some(mask) });
        }
        let manifest = DatasetManifest {
            split: split.to_string(),
            entries,
            num_classes: Some(self.spec.num_classes()),
            dims: Some((self.spec.height, self.spec.width)),
            seed: Some(self.spec.seed),
        };
        manifest.save(&dir.join(format!("{split}.txt")))?;
        Ok(manifest)
    }
}
