use crate::data::{ImageGrid, LabelGrid, Raster, Rect};

use super::CorruptError;

/// A grid cut into equally sized patches, one flattened HWC pixel column per
/// patch. Pixels outside the patches are kept so that `fold` restores them.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid<R: Raster> {
    base: R,
    rects: Vec<Rect>,
    patches: Vec<Vec<R::Elem>>,
}

/// Row-major stride-`ps` tiling of an `height × width` grid.
pub fn tiling(height: usize, width: usize, ps: usize) -> Result<Vec<Rect>, CorruptError> {
    if ps == 0 || !height.is_multiple_of(ps) || !width.is_multiple_of(ps) {
        return Err(CorruptError::Indivisible { height, width, ps });
    }
    Ok((0..height / ps)
        .flat_map(|r| (0..width / ps).map(move |c| Rect::new(r * ps, c * ps, ps, ps)))
        .collect())
}

/// Checks that rects are non-empty, equally sized, disjoint and inside the grid.
pub fn check_rects(rects: &[Rect], height: usize, width: usize) -> Result<(), CorruptError> {
    let Some(first) = rects.first() else {
        return Err(CorruptError::Rects("no patches".into()));
    };
    for (i, r) in rects.iter().enumerate() {
        if !r.fits(height, width) {
            return Err(CorruptError::Rects(format!("{r:?} outside {height}x{width} grid")));
        }
        if (r.height, r.width) != (first.height, first.width) {
            return Err(CorruptError::Rects(format!("{r:?} differs in size from {first:?}")));
        }
        if let Some(o) = rects[i + 1..].iter().find(|o| o.overlaps(r)) {
            return Err(CorruptError::Rects(format!("{r:?} overlaps {o:?}")));
        }
    }
    Ok(())
}

pub fn unfold<R: Raster>(grid: &R, ps: usize) -> Result<PatchGrid<R>, CorruptError> {
    let rects = tiling(grid.height(), grid.width(), ps)?;
    PatchGrid::from_rects(grid, rects)
}

pub fn fold<R: Raster>(patches: &PatchGrid<R>) -> R {
    patches.fold()
}

impl<R: Raster> PatchGrid<R> {
    pub fn from_rects(grid: &R, rects: Vec<Rect>) -> Result<Self, CorruptError> {
        check_rects(&rects, grid.height(), grid.width())?;
        let patches = rects
            .iter()
            .map(|&r| grid.crop(r).map(|p| p.raw().to_vec()))
            .collect::<Result<_, _>>()?;
        Ok(Self { base: grid.clone(), rects, patches })
    }

    pub fn fold(&self) -> R {
        let mut out = self.base.clone();
        for (r, p) in self.rects.iter().zip(&self.patches) {
            let patch = self.base.with_buffer(r.height, r.width, p.clone());
            out.paste(&patch, r.top, r.left).expect("rects checked at construction");
        }
        out
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.base.height(), self.base.width())
    }

    /// Patch height and width.
    pub fn patch_dims(&self) -> (usize, usize) {
        (self.rects[0].height, self.rects[0].width)
    }

    pub fn rects(&self) -> &[Rect] {
        &self.rects
    }

    pub fn patch(&self, i: usize) -> &[R::Elem] {
        &self.patches[i]
    }

    pub fn patch_mut(&mut self, i: usize) -> &mut Vec<R::Elem> {
        &mut self.patches[i]
    }

    /// Slot `s` receives the former contents of patch `perm[s]`.
    pub fn gather(&mut self, perm: &[usize]) {
        debug_assert_eq!(perm.len(), self.patches.len());
        let old = self.patches.clone();
        for (slot, &src) in perm.iter().enumerate() {
            self.patches[slot].clone_from(&old[src]);
        }
    }
}

/// One grid in a corruption batch. Every grid in a batch shares its patch
/// sampling, so images and their masks stay consistent.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Image(ImageGrid),
    Mask(LabelGrid),
}

impl Layer {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Layer::Image(g) => g.dims(),
            Layer::Mask(g) => g.dims(),
        }
    }

    pub fn as_image(&self) -> Option<&ImageGrid> {
        match self {
            Layer::Image(g) => Some(g),
            Layer::Mask(_) => None,
        }
    }

    pub fn as_mask(&self) -> Option<&LabelGrid> {
        match self {
            Layer::Mask(g) => Some(g),
            Layer::Image(_) => None,
        }
    }

    pub fn into_image(self) -> Option<ImageGrid> {
        match self {
            Layer::Image(g) => Some(g),
            Layer::Mask(_) => None,
        }
    }

    pub fn into_mask(self) -> Option<LabelGrid> {
        match self {
            Layer::Mask(g) => Some(g),
            Layer::Image(_) => None,
        }
    }
}

impl From<ImageGrid> for Layer {
    fn from(g: ImageGrid) -> Self {
        Layer::Image(g)
    }
}

impl From<LabelGrid> for Layer {
    fn from(g: LabelGrid) -> Self {
        Layer::Mask(g)
    }
}
