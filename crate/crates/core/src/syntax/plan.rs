use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Rect;

use super::SyntaxError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraversalKind {
    /// Five landmark-centred crops, in anchor order.
    FiveCrop,
    /// Serpentine walk over the patch tiling.
    ZigZag,
}

impl FromStr for TraversalKind {
    type Err = SyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "five-crop" => Ok(TraversalKind::FiveCrop),
            "zig-zag" => Ok(TraversalKind::ZigZag),
            other => Err(SyntaxError::Plan(format!("unknown traversal '{other}' (five-crop | zig-zag)"))),
        }
    }
}

impl fmt::Display for TraversalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraversalKind::FiveCrop => "five-crop",
            TraversalKind::ZigZag => "zig-zag",
        })
    }
}

/// Ordered patch rectangles visited by the syntax model; `G = rects.len()`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraversalPlan {
    pub kind: TraversalKind,
    pub ps: usize,
    pub height: usize,
    pub width: usize,
    pub rects: Vec<Rect>,
    /// Five-crop only: training sequences may start at a random rotation.
    #[serde(default)]
    pub circular: bool,
}

impl TraversalPlan {
    /// Serpentine order: row 0 left to right, row 1 right to left, and so on.
    pub fn zigzag(height: usize, width: usize, ps: usize) -> Result<Self, SyntaxError> {
        if ps == 0 || !height.is_multiple_of(ps) || !width.is_multiple_of(ps) {
            return Err(SyntaxError::Plan(format!("{height}x{width} is not divisible by patch size {ps}")));
        }
        let (rows, cols) = (height / ps, width / ps);
        let mut rects = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for i in 0..cols {
                let c = if r % 2 == 0 { i } else { cols - 1 - i };
                rects.push(Rect::new(r * ps, c * ps, ps, ps));
            }
        }
        Self::from_parts(TraversalKind::ZigZag, height, width, ps, rects, false)
    }

    /// `ps × ps` crops centred on five anchors `(row, col)`, in anchor order.
    pub fn five_crop(height: usize, width: usize, ps: usize, anchors: &[(usize, usize)]) -> Result<Self, SyntaxError> {
        if anchors.len() != 5 {
            return Err(SyntaxError::Plan(format!("five-crop needs 5 anchors, got {}", anchors.len())));
        }
        let rects = anchors
            .iter()
            .map(|&(cy, cx)| {
                Rect::centered(cy, cx, ps)
                    .ok_or_else(|| SyntaxError::Plan(format!("crop of size {ps} at ({cy},{cx}) starts off the canvas")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_parts(TraversalKind::FiveCrop, height, width, ps, rects, false)
    }

    pub fn build(
        kind: TraversalKind,
        height: usize,
        width: usize,
        ps: usize,
        anchors: Option<&[(usize, usize)]>,
    ) -> Result<Self, SyntaxError> {
        match kind {
            TraversalKind::ZigZag => Self::zigzag(height, width, ps),
            TraversalKind::FiveCrop => {
                let anchors = anchors.ok_or_else(|| SyntaxError::Plan("five-crop needs anchors".into()))?;
                Self::five_crop(height, width, ps, anchors)
            }
        }
    }

    fn from_parts(
        kind: TraversalKind,
        height: usize,
        width: usize,
        ps: usize,
        rects: Vec<Rect>,
        circular: bool,
    ) -> Result<Self, SyntaxError> {
        let plan = Self { kind, ps, height, width, rects, circular };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), SyntaxError> {
        if self.rects.len() < 2 {
            return Err(SyntaxError::Plan(format!("plan has {} patches, need at least 2", self.rects.len())));
        }
        if let Some(r) = self.rects.iter().find(|r| !r.fits(self.height, self.width) || r.height != self.ps || r.width != self.ps) {
            return Err(SyntaxError::Plan(format!(
                "rect {r:?} is not a {0}x{0} patch inside {1}x{2}",
                self.ps, self.height, self.width
            )));
        }
        if self.circular && self.kind != TraversalKind::FiveCrop {
            return Err(SyntaxError::Plan("circular rotation applies to five-crop plans only".into()));
        }
        Ok(())
    }

    pub fn with_circular(mut self, circular: bool) -> Result<Self, SyntaxError> {
        self.circular = circular;
        self.validate()?;
        Ok(self)
    }

    /// Number of steps `G`.
    pub fn len(&self) -> usize {
        self.rects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SyntaxError> {
        let plan: Self = serde_json::from_str(text).map_err(|e| SyntaxError::Plan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: &Path) -> Result<(), SyntaxError> {
        std::fs::write(path, self.to_json()).map_err(|e| SyntaxError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, SyntaxError> {
        let text = std::fs::read_to_string(path).map_err(|e| SyntaxError::io(path, e))?;
        Self::from_json(&text)
    }
}
