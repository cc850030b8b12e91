//! Small geometric primitives shared across the crate.

use serde::{Deserialize, Serialize};

/// Frame index within a sequence (frame 0 is the first video frame).
pub type FrameId = u32;

/// A 2D position in pixel coordinates, sub-pixel precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn offset(&self, dx: f64, dy: f64) -> Point2 {
        Point2::new(self.x + dx, self.y + dy)
    }
}

/// True when `p` lies inside the continuous image rectangle spanned by pixel
/// centers, i.e. `0 <= x <= width-1` and `0 <= y <= height-1`. This is the
/// bounds rule used uniformly by flow queries, candidate grids and masks.
pub fn in_bounds(p: Point2, width: u32, height: u32) -> bool {
    p.is_finite()
        && p.x >= 0.0
        && p.y >= 0.0
        && p.x <= (width.saturating_sub(1)) as f64
        && p.y <= (height.saturating_sub(1)) as f64
}
