//! Axis-aligned boxes in normalized corner form and the overlap measures
//! built on them.
//!
//! Every box handled by the crate lives in `[0, 1]` image coordinates. Pixel
//! boxes are converted once at ingestion via [`BoundingBox::from_xywh`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `(x_min, y_min, x_max, y_max)` normalized by image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    /// Builds a box from corners, rejecting non-finite or inverted coordinates.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !b.corners().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite box {b:?}")));
        }
        if x_min > x_max || y_min > y_max {
            return Err(Error::InvalidInput(format!("inverted box {b:?}")));
        }
        Ok(b)
    }

    /// Converts a pixel-space COCO `[x, y, w, h]` box into normalized corner
    /// form, clamped to the unit square.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64, image_w: f64, image_h: f64) -> Result<Self> {
        if ![x, y, w, h, image_w, image_h].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite bbox [{x}, {y}, {w}, {h}] in {image_w}x{image_h} image"
            )));
        }
        if w < 0.0 || h < 0.0 {
            return Err(Error::InvalidInput(format!("negative bbox size {w}x{h}")));
        }
        if image_w <= 0.0 || image_h <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "image size must be positive, got {image_w}x{image_h}"
            )));
        }
        let clamp = |v: f64| v.clamp(0.0, 1.0);
        Ok(BoundingBox {
            x_min: clamp(x / image_w),
            y_min: clamp(y / image_h),
            x_max: clamp((x + w) / image_w),
            y_max: clamp((y + h) / image_h),
        })
    }

    /// Inverse of [`from_xywh`](Self::from_xywh) for an image of the given size.
    pub fn to_xywh(&self, image_w: f64, image_h: f64) -> [f64; 4] {
        [
            self.x_min * image_w,
            self.y_min * image_h,
            (self.x_max - self.x_min) * image_w,
            (self.y_max - self.y_min) * image_h,
        ]
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
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

    /// Returns a copy with every coordinate clamped into `[0, 1]`.
    pub fn clamped(&self) -> Self {
        let c = |v: f64| v.clamp(0.0, 1.0);
        BoundingBox {
            x_min: c(self.x_min),
            y_min: c(self.y_min),
            x_max: c(self.x_max),
            y_max: c(self.y_max),
        }
    }

    /// Sum of absolute differences between the four corner coordinates.
    pub fn l1_distance(&self, other: &BoundingBox) -> f64 {
        self.corners()
            .iter()
            .zip(other.corners())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        w.max(0.0) * h.max(0.0)
    }

    fn hull(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }
}

/// Intersection over union. Zero when the union has no area.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: IoU minus the fraction of the enclosing hull not covered
/// by the union. Zero when the hull has no area.
pub fn giou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = a.hull(b).area();
    if hull <= 0.0 || union <= 0.0 {
        return 0.0;
    }
    let iou = (inter / union).clamp(0.0, 1.0);
    iou - (hull - union).max(0.0) / hull
}
