use serde::{Deserialize, Serialize};

use super::DetectError;
use crate::model::FRAME;

/// Axis-aligned box, top-left corner plus size, in frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { x: cx - w / 2.0, y: cy - h / 2.0, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }

    /// Intersect with the `side × side` frame.
    pub fn clip(&self, side: f64) -> Self {
        let x0 = self.x.clamp(0.0, side);
        let y0 = self.y.clamp(0.0, side);
        let x1 = (self.x + self.w).clamp(0.0, side);
        let y1 = (self.y + self.h).clamp(0.0, side);
        Self { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let iw = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let ih = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        iw.max(0.0) * ih.max(0.0)
    }

    pub fn within_frame(&self) -> bool {
        let f = FRAME as f64;
        self.x >= 0.0 && self.y >= 0.0 && self.x + self.w <= f && self.y + self.h <= f
    }
}

/// Intersection over union, 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Regression targets of `gt` relative to `anchor`.
pub fn encode_box(anchor: &BBox, gt: &BBox) -> Result<[f64; 4], DetectError> {
    if !(anchor.w > 0.0 && anchor.h > 0.0) {
        return Err(DetectError::DegenerateAnchor);
    }
    let (acx, acy) = anchor.center();
    let (gcx, gcy) = gt.center();
    Ok([(gcx - acx) / anchor.w, (gcy - acy) / anchor.h, (gt.w / anchor.w).ln(), (gt.h / anchor.h).ln()])
}

pub fn decode_box(anchor: &BBox, d: &[f64; 4]) -> Result<BBox, DetectError> {
    if !(anchor.w > 0.0 && anchor.h > 0.0) {
        return Err(DetectError::DegenerateAnchor);
    }
    let (acx, acy) = anchor.center();
    Ok(BBox::from_center(acx + d[0] * anchor.w, acy + d[1] * anchor.h, anchor.w * d[2].exp(), anchor.h * d[3].exp()))
}

/// A scored box on one slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub slice_index: u32,
}
