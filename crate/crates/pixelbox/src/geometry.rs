//! Box representations and an independent rectangle-IoU oracle.
//!
//! Two views of the same box live here: [`DistanceBox`], the per-pixel
//! 4-distance parameterization the loss layer works on, and [`RectBox`],
//! the absolute corner form used by extraction, matching and the oracle.
//! Pixels are treated as points, not unit cells, so a box of distances
//! `(t, b, l, r)` has width exactly `l + r` and height exactly `t + b`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid rectangle: min exceeds max ({0})")]
    InvalidRect(String),
}

/// Distances from an anchor pixel to the top, bottom, left and right
/// bounds of a box. All components must be non-negative; box-branch
/// predictions pass through a ReLU so this holds by construction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistanceBox {
    pub top: f64,
    pub bottom: f64,
    pub left: f64,
    pub right: f64,
}

impl DistanceBox {
    pub fn new(top: f64, bottom: f64, left: f64, right: f64) -> Self {
        Self { top, bottom, left, right }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { top: a[0], bottom: a[1], left: a[2], right: a[3] }
    }

    /// Component order (top, bottom, left, right), matching the box-map
    /// channel layout.
    pub fn as_array(&self) -> [f64; 4] {
        [self.top, self.bottom, self.left, self.right]
    }

    pub fn height(&self) -> f64 {
        self.top + self.bottom
    }

    pub fn width(&self) -> f64 {
        self.left + self.right
    }

    /// `(top + bottom) * (left + right)`.
    pub fn area(&self) -> f64 {
        self.height() * self.width()
    }

    /// A box is empty iff it has zero height or zero width.
    pub fn is_empty(&self) -> bool {
        self.height() == 0.0 || self.width() == 0.0
    }

    pub fn has_negative(&self) -> bool {
        self.as_array().iter().any(|&v| v < 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.top * s, self.bottom * s, self.left * s, self.right * s)
    }
}

/// Absolute axis-aligned box with `x_min <= x_max`, `y_min <= y_max`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RectBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl RectBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        if x_min > x_max || y_min > y_max {
            return Err(GeometryError::InvalidRect(format!(
                "({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            x_min: self.x_min * s,
            y_min: self.y_min * s,
            x_max: self.x_max * s,
            y_max: self.y_max * s,
        }
    }

    /// Intersection area with `other`; 0 when disjoint.
    pub fn intersection_area(&self, other: &RectBox) -> f64 {
        let iw = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let ih = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        iw * ih
    }
}

/// Pixel location as (row, column).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelCoord {
    pub row: usize,
    pub col: usize,
}

impl PixelCoord {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Inverts the distance parameterization around an anchor pixel:
/// `x_min = j - left`, `x_max = j + right`, `y_min = i - top`,
/// `y_max = i + bottom`. The anchor always lies inside or on the
/// boundary of the result.
pub fn distances_to_rect(anchor: PixelCoord, d: &DistanceBox) -> RectBox {
    let i = anchor.row as f64;
    let j = anchor.col as f64;
    RectBox {
        x_min: j - d.left,
        y_min: i - d.top,
        x_max: j + d.right,
        y_max: i + d.bottom,
    }
}

/// Standard intersection-over-union of two axis-aligned rectangles.
///
/// Total on all valid rects: returns 0 when the union has zero area
/// (both boxes degenerate) rather than NaN.
pub fn rect_iou(a: &RectBox, b: &RectBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
