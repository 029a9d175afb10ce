//! Bounding-box algebra: areas, intersection, IoU, coordinate conversions.
//!
//! Coordinates are continuous and corner-based: a box spans
//! `[x_min, x_max] x [y_min, y_max]` in pixels and its area is
//! `(x_max - x_min) * (y_max - y_min)`, with no pixel off-by-one convention.
//! Degenerate (zero-area) boxes signal upstream data errors and are rejected
//! at construction, so every `BBox` in circulation is valid by type.

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, `x_min < x_max`, `y_min < y_max`,
/// all finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite coordinate in ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBox(format!(
                "empty extent: ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
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

    /// Center/size view of the same region.
    pub fn to_center(&self) -> Result<CenterBox> {
        CenterBox::new(
            self.x_min + self.width() / 2.0,
            self.y_min + self.height() / 2.0,
            self.width(),
            self.height(),
        )
    }
}

/// Center/size parameterization used by anchor priors and grid decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl CenterBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let fields = [cx, cy, w, h];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite center box ({cx}, {cy}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "non-positive size in center box ({cx}, {cy}, {w}, {h})"
            )));
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Corner view of the same region.
    pub fn to_corner(&self) -> Result<BBox> {
        BBox::new(
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }
}

/// Intersection-over-union of two boxes: `|a ∩ b| / |a ∪ b|`, with
/// `|a ∪ b| = |a| + |b| - |a ∩ b|`. Returns 0 when the boxes are disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Area of the overlap region, 0 when disjoint.
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let ow = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let oh = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if ow <= 0.0 || oh <= 0.0 {
        0.0
    } else {
        ow * oh
    }
}
