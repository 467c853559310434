use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, ImageGrid, Raster, Rect};

/// Strength of colour jitter: gain drawn from `[1 - gain, 1 + gain]` and
/// bias from `[-bias, bias]`, independently per channel.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PhotometricParams {
    pub gain: f32,
    pub bias: f32,
}

/// A drawn colour jitter, replayable on any image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorJitter {
    pub gain: [f32; 3],
    pub bias: [f32; 3],
}

impl ColorJitter {
    pub const IDENTITY: ColorJitter = ColorJitter { gain: [1.0; 3], bias: [0.0; 3] };

    pub fn sample(params: PhotometricParams, rng: &mut impl Rng) -> Self {
        let mut j = Self::IDENTITY;
        for c in 0..3 {
            if params.gain > 0.0 {
                j.gain[c] = rng.gen_range(1.0 - params.gain..=1.0 + params.gain);
            }
            if params.bias > 0.0 {
                j.bias[c] = rng.gen_range(-params.bias..=params.bias);
            }
        }
        j
    }

    pub fn apply(&self, img: &ImageGrid) -> ImageGrid {
        let mut out = img.clone();
        for (i, v) in out.raw_mut().iter_mut().enumerate() {
            let c = i % 3;
            *v = (*v * self.gain[c] + self.bias[c]).clamp(0.0, 1.0);
        }
        out
    }
}

/// Draws a colour jitter from `seed` and applies it.
pub fn photometric(img: &ImageGrid, params: PhotometricParams, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ColorJitter::sample(params, &mut rng).apply(img)
}

/// Crop followed by an optional horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometricSpec {
    pub rect: Rect,
    pub flip: bool,
}

impl GeometricSpec {
    pub fn full_frame(height: usize, width: usize) -> Self {
        Self { rect: Rect::new(0, 0, height, width), flip: false }
    }
}

pub fn geometric<R: Raster>(grid: &R, spec: &GeometricSpec) -> Result<R, DataError> {
    let cropped = grid.crop(spec.rect)?;
    Ok(if spec.flip { cropped.flip_horizontal() } else { cropped })
}

/// Multiplies the crop rectangle by `ratio`, rounding to the nearest pixel.
pub fn scale_geometric(spec: &GeometricSpec, ratio: f64) -> GeometricSpec {
    let s = |v: usize| (v as f64 * ratio).round() as usize;
    let r = spec.rect;
    GeometricSpec { rect: Rect::new(s(r.top), s(r.left), s(r.height), s(r.width)), flip: spec.flip }
}
