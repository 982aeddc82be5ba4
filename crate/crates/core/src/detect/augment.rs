//! Box-aware augmentation of square slices.

use serde::{Deserialize, Serialize};

use super::BBox;
use crate::ingest::RawImage;
use crate::rng::Xoshiro256;

/// Allowed box sizes after zooming, in pixels.
pub const ZOOM_WIDTH: (f64, f64) = (15.0, 206.0);
pub const ZOOM_HEIGHT: (f64, f64) = (9.0, 182.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AugmentOp {
    HorizontalFlip,
    VerticalFlip,
    /// Scale about the image centre.
    Zoom(f64),
    /// Zero-filled rectangles.
    Dropout(Vec<BBox>),
    /// Power curve on the min–max normalised intensities.
    Gamma(f64),
    /// Additive Gaussian noise, std relative to the intensity range.
    Noise {
        std: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub zoom_p: f64,
    pub zoom_range: (f64, f64),
    pub zoom_attempts: usize,
    pub dropout_p: f64,
    pub dropout_count: (usize, usize),
    pub dropout_size: (f64, f64),
    pub gamma_p: f64,
    pub gamma_range: (f64, f64),
    pub noise_p: f64,
    pub noise_std: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            hflip_p: 0.5,
            vflip_p: 0.5,
            zoom_p: 0.5,
            zoom_range: (0.8, 1.5),
            zoom_attempts: 10,
            dropout_p: 0.5,
            dropout_count: (15, 20),
            dropout_size: (20.0, 40.0),
            gamma_p: 0.3,
            gamma_range: (0.7, 1.5),
            noise_p: 0.3,
            noise_std: 0.02,
        }
    }
}

pub fn hflip_box(b: &BBox, side: f64) -> BBox {
    BBox::new(side - b.x - b.w, b.y, b.w, b.h)
}

pub fn vflip_box(b: &BBox, side: f64) -> BBox {
    BBox::new(b.x, side - b.y - b.h, b.w, b.h)
}

pub fn zoom_box(b: &BBox, factor: f64, side: f64) -> BBox {
    let c = side / 2.0;
    BBox::new(c + factor * (b.x - c), c + factor * (b.y - c), factor * b.w, factor * b.h)
}

/// Whether zooming by `factor` keeps every box inside the frame and within
/// the size limits.
pub fn zoom_allowed(boxes: &[BBox], factor: f64, side: f64) -> bool {
    boxes.iter().all(|b| {
        let z = zoom_box(b, factor, side);
        z.x >= 0.0
            && z.y >= 0.0
            && z.x + z.w <= side
            && z.y + z.h <= side
            && (ZOOM_WIDTH.0..=ZOOM_WIDTH.1).contains(&z.w)
            && (ZOOM_HEIGHT.0..=ZOOM_HEIGHT.1).contains(&z.h)
    })
}

/// Rejection-sample dropout rectangles that overlap no box. A rectangle
/// that fails 100 draws is skipped.
pub fn dropout_rects(boxes: &[BBox], count: usize, size: (f64, f64), side: f64, rng: &mut Xoshiro256) -> Vec<BBox> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..100 {
            let w = rng.uniform(size.0, size.1).round();
            let h = rng.uniform(size.0, size.1).round();
            let r = BBox::new(rng.uniform(0.0, side - w).floor(), rng.uniform(0.0, side - h).floor(), w, h);
            if boxes.iter().all(|b| r.intersection(b) == 0.0) {
                out.push(r);
                break;
            }
        }
    }
    out
}

/// Draw a sequence of operations for one sample.
pub fn sample_ops(spec: &AugmentSpec, boxes: &[BBox], side: f64, rng: &mut Xoshiro256) -> Vec<AugmentOp> {
    let mut ops = Vec::new();
    if rng.bernoulli(spec.hflip_p) {
        ops.push(AugmentOp::HorizontalFlip);
    }
    if rng.bernoulli(spec.vflip_p) {
        ops.push(AugmentOp::VerticalFlip);
    }
    let mut current: Vec<BBox> = boxes.to_vec();
    for op in &ops {
        current = apply_boxes(op, &current, side);
    }
    if rng.bernoulli(spec.zoom_p) {
        for _ in 0..spec.zoom_attempts {
            let f = rng.uniform(spec.zoom_range.0, spec.zoom_range.1);
            if zoom_allowed(&current, f, side) {
                ops.push(AugmentOp::Zoom(f));
                current = apply_boxes(&AugmentOp::Zoom(f), &current, side);
                break;
            }
        }
    }
    if rng.bernoulli(spec.dropout_p) {
        let n = spec.dropout_count.0 + rng.index(spec.dropout_count.1 - spec.dropout_count.0 + 1);
        ops.push(AugmentOp::Dropout(dropout_rects(&current, n, spec.dropout_size, side, rng)));
    }
    if rng.bernoulli(spec.gamma_p) {
        ops.push(AugmentOp::Gamma(rng.uniform(spec.gamma_range.0, spec.gamma_range.1)));
    }
    if rng.bernoulli(spec.noise_p) {
        ops.push(AugmentOp::Noise { std: spec.noise_std, seed: rng.next_u64() });
    }
    ops
}

fn apply_boxes(op: &AugmentOp, boxes: &[BBox], side: f64) -> Vec<BBox> {
    boxes
        .iter()
        .map(|b| match op {
            AugmentOp::HorizontalFlip => hflip_box(b, side),
            AugmentOp::VerticalFlip => vflip_box(b, side),
            AugmentOp::Zoom(f) => zoom_box(b, *f, side),
            _ => *b,
        })
        .collect()
}

/// Apply one operation to a square image and its boxes.
pub fn augment_geometry(image: &RawImage, boxes: &[BBox], op: &AugmentOp) -> (RawImage, Vec<BBox>) {
    assert_eq!(image.height, image.width, "square slices only");
    let n = image.width;
    let side = n as f64;
    let px = &image.pixels;
    let pixels: Vec<f64> = match op {
        AugmentOp::HorizontalFlip => (0..n * n).map(|i| px[(i / n) * n + (n - 1 - i % n)]).collect(),
        AugmentOp::VerticalFlip => (0..n * n).map(|i| px[(n - 1 - i / n) * n + i % n]).collect(),
        AugmentOp::Zoom(f) => {
            let c = side / 2.0;
            let sample = |y: f64, x: f64| -> f64 {
                if !(0.0..=side - 1.0).contains(&y) || !(0.0..=side - 1.0).contains(&x) {
                    return 0.0;
                }
                let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(n - 1), (x0 + 1).min(n - 1));
                let (fy, fx) = (y - y0 as f64, x - x0 as f64);
                px[y0 * n + x0] * (1.0 - fy) * (1.0 - fx)
                    + px[y0 * n + x1] * (1.0 - fy) * fx
                    + px[y1 * n + x0] * fy * (1.0 - fx)
                    + px[y1 * n + x1] * fy * fx
            };
            (0..n * n)
                .map(|i| {
                    let (oy, ox) = ((i / n) as f64 + 0.5, (i % n) as f64 + 0.5);
                    sample(c + (oy - c) / f - 0.5, c + (ox - c) / f - 0.5)
                })
                .collect()
        }
        AugmentOp::Dropout(rects) => {
            let mut out = px.clone();
            for r in rects {
                let (x0, y0) = (r.x.max(0.0) as usize, r.y.max(0.0) as usize);
                let (x1, y1) = (((r.x + r.w) as usize).min(n), ((r.y + r.h) as usize).min(n));
                for y in y0..y1 {
                    out[y * n + x0..y * n + x1].iter_mut().for_each(|v| *v = 0.0);
                }
            }
            out
        }
        AugmentOp::Gamma(g) => {
            let (lo, hi) = px.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let range = hi - lo;
            if range > 0.0 {
                px.iter().map(|&v| lo + range * ((v - lo) / range).powf(*g)).collect()
            } else {
                px.clone()
            }
        }
        AugmentOp::Noise { std, seed } => {
            let (lo, hi) = px.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let mut rng = Xoshiro256::seed_from_u64(*seed);
            px.iter().map(|&v| v + std * (hi - lo) * rng.normal()).collect()
        }
    };
    (RawImage::new(n, n, pixels), apply_boxes(op, boxes, side))
}

/// Sample and apply a full augmentation chain.
pub fn augment(
    image: &RawImage,
    boxes: &[BBox],
    spec: &AugmentSpec,
    seed: u64,
) -> (RawImage, Vec<BBox>, Vec<AugmentOp>) {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let ops = sample_ops(spec, boxes, image.width as f64, &mut rng);
    let mut img = image.clone();
    let mut bx = boxes.to_vec();
    for op in &ops {
        (img, bx) = augment_geometry(&img, &bx, op);
    }
    (img, bx, ops)
}
