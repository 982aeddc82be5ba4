//! A fixed, training-free patch embedder for prepared slices.
//!
//! Stands in for the backbone when pixels are available (phantoms): each
//! 14×14 patch is summarised by a handful of intensity statistics which a
//! seeded random projection lifts to the token width.

use super::{TokenGrid, DINO_GRID};
use crate::ingest::PreparedSlice;
use crate::rng::Xoshiro256;

pub const PATCH: usize = 14;
const DESCRIPTOR: usize = 6;

#[derive(Debug, Clone)]
pub struct PatchEmbedder {
    pub dim: usize,
    /// `dim × DESCRIPTOR`, row-major.
    projection: Vec<f64>,
}

impl PatchEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let scale = 1.0 / (DESCRIPTOR as f64).sqrt();
        let projection = (0..dim * DESCRIPTOR).map(|_| rng.normal() * scale).collect();
        Self { dim, projection }
    }

    fn lift(&self, desc: &[f64; DESCRIPTOR], out: &mut Vec<f32>) {
        for row in self.projection.chunks_exact(DESCRIPTOR) {
            out.push(row.iter().zip(desc).map(|(a, b)| a * b).sum::<f64>() as f32);
        }
    }

    /// Raw per-patch descriptors: mean, max, std, centre-surround contrast,
    /// squared mean and a constant.
    pub fn descriptors(slice: &PreparedSlice) -> Vec<[f64; DESCRIPTOR]> {
        let side = slice.side();
        let g = DINO_GRID;
        let mut stats = vec![(0.0, 0.0f64, 0.0); g * g];
        for py in 0..g {
            for px in 0..g {
                let (mut sum, mut sq, mut max) = (0.0, 0.0, f64::MIN);
                for y in py * PATCH..((py + 1) * PATCH).min(side) {
                    for x in px * PATCH..((px + 1) * PATCH).min(side) {
                        let v = slice.get(y, x);
                        sum += v;
                        sq += v * v;
                        max = max.max(v);
                    }
                }
                let n = (PATCH * PATCH) as f64;
                let mean = sum / n;
                stats[py * g + px] = (mean, max, (sq / n - mean * mean).max(0.0).sqrt());
            }
        }
        let mut out = Vec::with_capacity(g * g);
        for py in 0..g {
            for px in 0..g {
                let (mean, max, std) = stats[py * g + px];
                let (mut around, mut k) = (0.0, 0.0);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (y, x) = (py as i64 + dy, px as i64 + dx);
                        if (dy, dx) != (0, 0) && (0..g as i64).contains(&y) && (0..g as i64).contains(&x) {
                            around += stats[y as usize * g + x as usize].0;
                            k += 1.0;
                        }
                    }
                }
                out.push([mean, max, std, mean - around / k, mean * mean, 1.0]);
            }
        }
        out
    }

    pub fn embed(&self, slice: &PreparedSlice) -> TokenGrid {
        let desc = Self::descriptors(slice);
        let mut global = [0.0; DESCRIPTOR];
        for d in &desc {
            for (g, v) in global.iter_mut().zip(d) {
                *g += v / desc.len() as f64;
            }
        }
        let mut cls = Vec::with_capacity(self.dim);
        self.lift(&global, &mut cls);
        let mut patches = Vec::with_capacity(self.dim * desc.len());
        for d in &desc {
            self.lift(d, &mut patches);
        }
        TokenGrid::new(cls, patches).expect("finite projection of finite pixels")
    }
}
