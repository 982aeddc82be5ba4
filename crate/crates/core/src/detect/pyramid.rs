use std::sync::Arc;

use super::{DetectError, PyramidSpec};
use crate::embeddings::DINO_GRID;
use crate::rng::Xoshiro256;

/// Per-location affine map from token width to pyramid channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Projection {
    /// Frozen Gaussian projection scaled by `1/√in_dim`.
    pub fn seeded(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let s = 1.0 / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim).map(|_| rng.normal() * s).collect(),
            bias: vec![0.0; out_dim],
        }
    }

    /// Identity on the first `min(in, out)` channels.
    pub fn identity(in_dim: usize, out_dim: usize) -> Self {
        let mut weights = vec![0.0; in_dim * out_dim];
        for i in 0..in_dim.min(out_dim) {
            weights[i * in_dim + i] = 1.0;
        }
        Self { in_dim, out_dim, weights, bias: vec![0.0; out_dim] }
    }

    pub fn apply(&self, x: &[f32], out: &mut [f64]) {
        for ((o, row), b) in out.iter_mut().zip(self.weights.chunks_exact(self.in_dim)).zip(&self.bias) {
            *o = b + row.iter().zip(x).map(|(w, v)| w * *v as f64).sum::<f64>();
        }
    }
}

/// One pyramid level. P3 and P4 keep token-width values: bilinear
/// upsampling has weights summing to one, so it commutes with the affine
/// projection and the 256-channel feature is produced on demand. P5 and P6
/// follow a max pool and are stored projected.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelMap {
    Native { size: usize, data: Vec<f32> },
    Projected { size: usize, data: Vec<f32> },
}

impl LevelMap {
    pub fn size(&self) -> usize {
        match self {
            Self::Native { size, .. } | Self::Projected { size, .. } => *size,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pyramid {
    pub levels: Vec<LevelMap>,
    pub projection: Arc<Projection>,
}

impl Pyramid {
    pub fn channels(&self) -> usize {
        self.projection.out_dim
    }

    /// 256-channel feature at `(level, row, col)`.
    pub fn feature(&self, level: usize, row: usize, col: usize, out: &mut [f64]) {
        let p = &self.projection;
        match &self.levels[level] {
            LevelMap::Native { size, data } => {
                let at = (row * size + col) * p.in_dim;
                p.apply(&data[at..at + p.in_dim], out);
            }
            LevelMap::Projected { size, data } => {
                let at = (row * size + col) * p.out_dim;
                for (o, v) in out.iter_mut().zip(&data[at..at + p.out_dim]) {
                    *o = *v as f64;
                }
            }
        }
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.levels.iter().map(LevelMap::size).collect()
    }
}

/// 2× bilinear upsampling with half-pixel centres and edge clamping.
fn upsample2(data: &[f32], size: usize, ch: usize) -> Vec<f32> {
    let out_size = 2 * size;
    let coord = |o: usize| {
        let s = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (size - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(size - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = vec![0.0f32; out_size * out_size * ch];
    for oy in 0..out_size {
        let (y0, y1, fy) = coord(oy);
        for ox in 0..out_size {
            let (x0, x1, fx) = coord(ox);
            let dst = (oy * out_size + ox) * ch;
            let taps = [
                ((y0 * size + x0) * ch, (1.0 - fy) * (1.0 - fx)),
                ((y0 * size + x1) * ch, (1.0 - fy) * fx),
                ((y1 * size + x0) * ch, fy * (1.0 - fx)),
                ((y1 * size + x1) * ch, fy * fx),
            ];
            for c in 0..ch {
                out[dst + c] = taps.iter().map(|&(at, w)| w * data[at + c] as f64).sum::<f64>() as f32;
            }
        }
    }
    out
}

/// 2×2 reduction with stride 2, dropping a trailing odd row/column.
fn reduce2(data: &[f32], size: usize, ch: usize, max: bool) -> (Vec<f32>, usize) {
    let out_size = size / 2;
    let mut out = vec![0.0f32; out_size * out_size * ch];
    for oy in 0..out_size {
        for ox in 0..out_size {
            let dst = (oy * out_size + ox) * ch;
            for c in 0..ch {
                let taps = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .map(|(dy, dx)| data[((2 * oy + dy) * size + 2 * ox + dx) * ch + c]);
                out[dst + c] = if max {
                    taps.into_iter().fold(f32::NEG_INFINITY, f32::max)
                } else {
                    (taps.iter().map(|&v| v as f64).sum::<f64>() / 4.0) as f32
                };
            }
        }
    }
    (out, out_size)
}

/// Build P3–P6 from a 37×37 grid of patch tokens (row-major, `dim` each).
pub fn build_pyramid(patches: &[f32], projection: Arc<Projection>, spec: &PyramidSpec) -> Result<Pyramid, DetectError> {
    let g = DINO_GRID;
    let dim = projection.in_dim;
    if patches.len() != g * g * dim {
        return Err(DetectError::BadGrid { expected: g * g * dim, got: patches.len() });
    }
    let sizes: Vec<usize> = spec.levels.iter().map(|l| l.size).collect();
    if sizes != [2 * g, g, g / 2, g / 4] || spec.channels != projection.out_dim {
        return Err(DetectError::BadGrid { expected: g, got: sizes.get(1).copied().unwrap_or(0) });
    }
    let ch = projection.out_dim;
    let p3 = upsample2(patches, g, dim);
    let mut projected = vec![0.0f32; g * g * ch];
    let mut buf = vec![0.0; ch];
    for (loc, out) in projected.chunks_exact_mut(ch).enumerate() {
        projection.apply(&patches[loc * dim..(loc + 1) * dim], &mut buf);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = *b as f32;
        }
    }
    let (p5, s5) = reduce2(&projected, g, ch, true);
    let (p6, s6) = reduce2(&p5, s5, ch, false);
    Ok(Pyramid {
        levels: vec![
            LevelMap::Native { size: 2 * g, data: p3 },
            LevelMap::Native { size: g, data: patches.to_vec() },
            LevelMap::Projected { size: s5, data: p5 },
            LevelMap::Projected { size: s6, data: p6 },
        ],
        projection,
    })
}
