use serde::{Deserialize, Serialize};

use super::BBox;
use crate::model::FRAME;

/// Aspect ratios `h / w`.
pub const RATIOS: [f64; 3] = [0.5, 1.0, 2.0];
pub const SCALES: [f64; 3] = [1.0, 1.26, 1.587];
pub const ANCHORS_PER_LOCATION: usize = RATIOS.len() * SCALES.len();

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub size: usize,
    pub base: f64,
}

impl LevelSpec {
    pub fn stride(&self) -> f64 {
        FRAME as f64 / self.size as f64
    }
}

/// Pyramid levels P3–P6 over the 518-pixel frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidSpec {
    pub levels: Vec<LevelSpec>,
    pub channels: usize,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        Self {
            levels: vec![
                LevelSpec { size: 74, base: 16.0 },
                LevelSpec { size: 37, base: 32.0 },
                LevelSpec { size: 18, base: 64.0 },
                LevelSpec { size: 9, base: 128.0 },
            ],
            channels: 256,
        }
    }
}

impl PyramidSpec {
    pub fn locations(&self) -> usize {
        self.levels.iter().map(|l| l.size * l.size).sum()
    }

    /// First flat location index of each level.
    pub fn level_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.levels
            .iter()
            .map(|l| {
                let o = acc;
                acc += l.size * l.size;
                o
            })
            .collect()
    }
}

/// Anchor shape for ratio `r = h/w` and scale `s` at base `b`:
/// area `(b·s)²`, `w = √(area/r)`, `h = r·w`.
pub fn anchor_shape(base: f64, ratio: f64, scale: f64) -> (f64, f64) {
    let area = (base * scale).powi(2);
    let w = (area / ratio).sqrt();
    (w, ratio * w)
}

/// All anchors, ordered level, row, column, then ratio-major shape index.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub boxes: Vec<BBox>,
    pub spec: PyramidSpec,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Flat location index and shape index of anchor `i`.
    pub fn split_index(i: usize) -> (usize, usize) {
        (i / ANCHORS_PER_LOCATION, i % ANCHORS_PER_LOCATION)
    }
}

pub fn generate_anchors(spec: &PyramidSpec) -> AnchorSet {
    let mut boxes = Vec::with_capacity(spec.locations() * ANCHORS_PER_LOCATION);
    for level in &spec.levels {
        let stride = level.stride();
        for row in 0..level.size {
            for col in 0..level.size {
                let (cx, cy) = ((col as f64 + 0.5) * stride, (row as f64 + 0.5) * stride);
                for &r in &RATIOS {
                    for &s in &SCALES {
                        let (w, h) = anchor_shape(level.base, r, s);
                        boxes.push(BBox::from_center(cx, cy, w, h));
                    }
                }
            }
        }
    }
    AnchorSet { boxes, spec: spec.clone() }
}
