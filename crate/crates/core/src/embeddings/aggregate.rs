use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EmbedError, Tensor};
use crate::model::ViewKind;

/// Backbone output for one slice: a CLS vector plus a row-major patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub dim: usize,
    pub cls: Vec<f32>,
    /// `n_patches × dim`, row-major over the patch grid.
    pub patches: Vec<f32>,
}

impl TokenGrid {
    pub fn new(cls: Vec<f32>, patches: Vec<f32>) -> Result<Self, EmbedError> {
        let dim = cls.len();
        if dim == 0 || !patches.len().is_multiple_of(dim) {
            return Err(EmbedError::DimMismatch { expected: dim, got: patches.len() });
        }
        if cls.iter().chain(&patches).any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self { dim, cls, patches })
    }

    pub fn n_patches(&self) -> usize {
        self.patches.len() / self.dim
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        &self.patches[i * self.dim..(i + 1) * self.dim]
    }

    /// Stack slices into a `[n_slices, 1 + n_patches, dim]` tensor (CLS first).
    pub fn stack(slices: &[TokenGrid]) -> Result<Tensor, EmbedError> {
        let first = slices.first().ok_or(EmbedError::EmptyInput)?;
        let tokens = 1 + first.n_patches();
        let mut data = Vec::with_capacity(slices.len() * tokens * first.dim);
        for s in slices {
            if s.dim != first.dim || s.n_patches() + 1 != tokens {
                return Err(EmbedError::DimMismatch { expected: first.dim, got: s.dim });
            }
            data.extend_from_slice(&s.cls);
            data.extend_from_slice(&s.patches);
        }
        Tensor::new(vec![slices.len(), tokens, first.dim], data)
    }

    pub fn unstack(t: &Tensor) -> Result<Vec<TokenGrid>, EmbedError> {
        let [n, tokens, dim] = t.dims[..] else {
            return Err(EmbedError::CorruptHeader(format!("expected rank 3, got {:?}", t.dims)));
        };
        if tokens < 1 || dim == 0 {
            return Err(EmbedError::CorruptHeader(format!("bad token dims {:?}", t.dims)));
        }
        let per = tokens * dim;
        (0..n)
            .map(|s| {
                let block = &t.data[s * per..(s + 1) * per];
                TokenGrid::new(block[..dim].to_vec(), block[dim..].to_vec())
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMode {
    ClsMean,
    ClsMeanStd,
    PatchMean,
    PatchMeanStd,
}

impl AggregationMode {
    pub const ALL: [AggregationMode; 4] = [
        AggregationMode::ClsMean,
        AggregationMode::ClsMeanStd,
        AggregationMode::PatchMean,
        AggregationMode::PatchMeanStd,
    ];

    pub fn with_std(self) -> bool {
        matches!(self, AggregationMode::ClsMeanStd | AggregationMode::PatchMeanStd)
    }

    pub fn output_dim(self, dim: usize) -> usize {
        if self.with_std() {
            2 * dim
        } else {
            dim
        }
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cls-mean" => Ok(Self::ClsMean),
            "cls-mean-std" => Ok(Self::ClsMeanStd),
            "patch-mean" => Ok(Self::PatchMean),
            "patch-mean-std" => Ok(Self::PatchMeanStd),
            other => Err(format!("unknown aggregation mode {other:?}")),
        }
    }
}

/// Running per-feature mean and sum of squared deviations (Welford).
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn push(&mut self, row: &[f32]) {
        self.n += 1.0;
        let inv = 1.0 / self.n;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(row) {
            let x = x as f64;
            let delta = x - *m;
            *m += delta * inv;
            *s += delta * (x - *m);
        }
    }

    fn finish(self, with_std: bool) -> Vec<f64> {
        let n = self.n;
        let mut out = self.mean;
        if with_std {
            out.extend(self.m2.into_iter().map(|s| (s / n).max(0.0).sqrt()));
        }
        out
    }
}

/// Collapse a view's slices into one vector.
///
/// CLS modes summarise the CLS token across slices; patch modes summarise
/// every patch token of every slice. The standard deviation is the
/// population one (divide by N), so a single token yields 0.
pub fn aggregate_view(slices: &[TokenGrid], mode: AggregationMode) -> Result<Vec<f64>, EmbedError> {
    let first = slices.first().ok_or(EmbedError::EmptyInput)?;
    let dim = first.dim;
    if let Some(bad) = slices.iter().find(|s| s.dim != dim) {
        return Err(EmbedError::DimMismatch { expected: dim, got: bad.dim });
    }
    let mut acc = Moments::new(dim);
    match mode {
        AggregationMode::ClsMean | AggregationMode::ClsMeanStd => {
            for s in slices {
                acc.push(&s.cls);
            }
        }
        AggregationMode::PatchMean | AggregationMode::PatchMeanStd => {
            for s in slices {
                for row in s.patches.chunks_exact(dim) {
                    acc.push(row);
                }
            }
            if acc.n == 0.0 {
                return Err(EmbedError::EmptyInput);
            }
        }
    }
    Ok(acc.finish(mode.with_std()))
}

/// Concatenated per-view vectors in the order LCC, RCC, LMLO, RMLO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyFeatures(pub Vec<f64>);

impl StudyFeatures {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn assemble_study(views: &BTreeMap<ViewKind, Vec<f64>>) -> Result<StudyFeatures, EmbedError> {
    let dim = views.get(&ViewKind::Lcc).ok_or(EmbedError::MissingView(ViewKind::Lcc))?.len();
    let mut out = Vec::with_capacity(4 * dim);
    for v in ViewKind::ALL {
        let vec = views.get(&v).ok_or(EmbedError::MissingView(v))?;
        if vec.len() != dim {
            return Err(EmbedError::DimMismatch { expected: dim, got: vec.len() });
        }
        if vec.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        out.extend_from_slice(vec);
    }
    Ok(StudyFeatures(out))
}
