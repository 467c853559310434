use serde::{Deserialize, Serialize};

use super::DataError;

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self { top, left, height, width }
    }

    /// Square of side `size` centred on `(cy, cx)`; `None` if it would start
    /// above or left of the origin.
    pub fn centered(cy: usize, cx: usize, size: usize) -> Option<Self> {
        let half = size / 2;
        Some(Self::new(cy.checked_sub(half)?, cx.checked_sub(half)?, size, size))
    }

    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.height > 0 && self.width > 0 && self.bottom() <= height && self.right() <= width
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.top < other.bottom() && other.top < self.bottom() && self.left < other.right() && other.left < self.right()
    }
}

/// Operations shared by images and label maps: both are HWC pixel buffers.
pub trait Raster: Clone {
    type Elem: Copy + PartialEq;

    fn height(&self) -> usize;
    fn width(&self) -> usize;
    fn channels(&self) -> usize;
    fn raw(&self) -> &[Self::Elem];
    fn raw_mut(&mut self) -> &mut [Self::Elem];
    /// Same metadata, new dims and buffer (buffer length already checked).
    fn with_buffer(&self, height: usize, width: usize, buf: Vec<Self::Elem>) -> Self;

    fn pixel(&self, y: usize, x: usize) -> &[Self::Elem] {
        let c = self.channels();
        let i = (y * self.width() + x) * c;
        &self.raw()[i..i + c]
    }

    /// Builds an `h × w` grid whose pixel `(y, x)` copies source pixel `src(y, x)`.
    fn remap(&self, h: usize, w: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let c = self.channels();
        let mut buf = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = src(y, x);
                buf.extend_from_slice(self.pixel(sy, sx));
            }
        }
        self.with_buffer(h, w, buf)
    }

    fn crop(&self, r: Rect) -> Result<Self, DataError> {
        if !r.fits(self.height(), self.width()) {
            return Err(DataError::Bounds { rect: r, height: self.height(), width: self.width() });
        }
        Ok(self.remap(r.height, r.width, |y, x| (r.top + y, r.left + x)))
    }

    fn flip_horizontal(&self) -> Self {
        let w = self.width();
        self.remap(self.height(), w, |y, x| (y, w - 1 - x))
    }

    /// Writes `patch` into this grid at `(top, left)`.
    fn paste(&mut self, patch: &Self, top: usize, left: usize) -> Result<(), DataError> {
        let r = Rect::new(top, left, patch.height(), patch.width());
        if !r.fits(self.height(), self.width()) || patch.channels() != self.channels() {
            return Err(DataError::Bounds { rect: r, height: self.height(), width: self.width() });
        }
        let c = self.channels();
        let w = self.width();
        let pw = patch.width();
        for y in 0..patch.height() {
            let dst = ((top + y) * w + left) * c;
            let src = y * pw * c;
            self.raw_mut()[dst..dst + pw * c].copy_from_slice(&patch.raw()[src..src + pw * c]);
        }
        Ok(())
    }
}

/// RGB image with values in `[0, 1]`, stored HWC.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageGrid {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, DataError> {
        if height == 0 || width == 0 {
            return Err(DataError::Invalid(format!("image dims {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(DataError::Invalid(format!("{} values for a {height}x{width} RGB image", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::Invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data).expect("valid fill")
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// Sets a value, clamped into `[0, 1]`.
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v.clamp(0.0, 1.0);
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl Raster for ImageGrid {
    type Elem = f32;
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn channels(&self) -> usize {
        3
    }
    fn raw(&self) -> &[f32] {
        &self.data
    }
    fn raw_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    fn with_buffer(&self, height: usize, width: usize, buf: Vec<f32>) -> Self {
        debug_assert_eq!(buf.len(), height * width * 3);
        Self { height, width, data: buf }
    }
}

/// Per-pixel class ids below `num_classes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<u8>,
}

impl LabelGrid {
    /// Largest supported class count (ids are stored as bytes).
    pub const MAX_CLASSES: usize = 256;

    pub fn new(height: usize, width: usize, num_classes: usize, data: Vec<u8>) -> Result<Self, DataError> {
        if height == 0 || width == 0 {
            return Err(DataError::Invalid(format!("mask dims {height}x{width}")));
        }
        if num_classes == 0 || num_classes > Self::MAX_CLASSES {
            return Err(DataError::Invalid(format!("class count {num_classes} outside 1..=256")));
        }
        if data.len() != height * width {
            return Err(DataError::Invalid(format!("{} ids for a {height}x{width} mask", data.len())));
        }
        if let Some(&v) = data.iter().find(|&&v| v as usize >= num_classes) {
            return Err(DataError::ClassOutOfRange { value: v as usize, num_classes });
        }
        Ok(Self { height, width, num_classes, data })
    }

    pub fn filled(height: usize, width: usize, num_classes: usize, class: u8) -> Result<Self, DataError> {
        Self::new(height, width, num_classes, vec![class; height * width])
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, class: u8) -> Result<(), DataError> {
        if class as usize >= self.num_classes {
            return Err(DataError::ClassOutOfRange { value: class as usize, num_classes: self.num_classes });
        }
        self.data[y * self.width + x] = class;
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Pixel count per class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &v in &self.data {
            h[v as usize] += 1;
        }
        h
    }

    /// Relabels every pixel through `map` into a grid with `num_classes` classes.
    pub fn relabel(&self, map: &[u8], num_classes: usize) -> Result<Self, DataError> {
        if map.len() < self.num_classes {
            return Err(DataError::Invalid(format!("map covers {} of {} classes", map.len(), self.num_classes)));
        }
        Self::new(self.height, self.width, num_classes, self.data.iter().map(|&v| map[v as usize]).collect())
    }
}

impl Raster for LabelGrid {
    type Elem = u8;
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn channels(&self) -> usize {
        1
    }
    fn raw(&self) -> &[u8] {
        &self.data
    }
    fn raw_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }
    fn with_buffer(&self, height: usize, width: usize, buf: Vec<u8>) -> Self {
        debug_assert_eq!(buf.len(), height * width);
        Self { height, width, num_classes: self.num_classes, data: buf }
    }
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_image(img: &ImageGrid, height: usize, width: usize) -> Result<ImageGrid, DataError> {
    if height == 0 || width == 0 {
        return Err(DataError::Invalid(format!("target dims {height}x{width}")));
    }
    let (h, w) = img.dims();
    if (h, w) == (height, width) {
        return Ok(img.clone());
    }
    let axis = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f32) {
        let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(src_len - 1);
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, (s - i0 as f64).min(1.0) as f32)
    };
    let mut out = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        let (y0, y1, fy) = axis(y, h, height);
        for x in 0..width {
            let (x0, x1, fx) = axis(x, w, width);
            for c in 0..3 {
                let top = img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
                let bot = img.get(y1, x0, c) * (1.0 - fx) + img.get(y1, x1, c) * fx;
                out.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
    }
    ImageGrid::new(height, width, out)
}

/// Nearest-neighbour resize; never invents class ids.
pub fn resize_mask(mask: &LabelGrid, height: usize, width: usize) -> Result<LabelGrid, DataError> {
    if height == 0 || width == 0 {
        return Err(DataError::Invalid(format!("target dims {height}x{width}")));
    }
    let (h, w) = mask.dims();
    Ok(mask.remap(height, width, |y, x| (nearest(y, h, height), nearest(x, w, width))))
}

/// Source index for nearest-neighbour sampling with half-pixel centres.
pub fn nearest(dst: usize, src_len: usize, dst_len: usize) -> usize {
    (((2 * dst + 1) * src_len) / (2 * dst_len)).min(src_len - 1)
}
