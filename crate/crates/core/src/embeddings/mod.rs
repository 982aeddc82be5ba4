//! Token grids, their aggregation into study-level feature vectors, and the
//! on-disk embedding store.

mod aggregate;
pub mod pixel;
mod store;
pub mod synthetic;
mod tensor;

pub use aggregate::{aggregate_view, assemble_study, AggregationMode, StudyFeatures, TokenGrid};
pub(crate) use store::atomic_write;
pub use store::{EmbeddingKey, EmbeddingStore};
pub use synthetic::{synthetic_embedding_provider, SignalSpec};
pub use tensor::{decode_tensor, encode_tensor, Tensor, TENSOR_MAGIC};

/// `f64` blocks in the same framing, used by checkpoints.
pub(crate) mod tensor_f64 {
    pub(crate) use super::tensor::{decode_f64_block as decode, encode_f64_block as encode};
}

use crate::model::ViewKind;

/// Backbone feature width.
pub const DINO_DIM: usize = 768;
/// Patches per side of the 518×518 frame at patch size 14.
pub const DINO_GRID: usize = 37;
pub const DINO_PATCHES: usize = DINO_GRID * DINO_GRID;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("no slices to aggregate")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("missing view {0}")]
    MissingView(ViewKind),
    #[error("corrupt tensor header: {0}")]
    CorruptHeader(String),
    #[error("missing key {0}")]
    MissingKey(String),
    #[error("non-finite value in tensor")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("index: {0}")]
    Index(#[from] serde_json::Error),
}

/// Aggregate every view of `exam` from `store` into study features.
pub fn load_study_features(
    store: &EmbeddingStore,
    exam: &crate::model::Exam,
    mode: AggregationMode,
) -> Result<StudyFeatures, EmbedError> {
    let mut views = std::collections::BTreeMap::new();
    for view in ViewKind::ALL {
        if !exam.views.contains_key(&view) {
            return Err(EmbedError::MissingView(view));
        }
        let key = EmbeddingKey::new(&exam.patient_id, &exam.exam_id, view);
        let grids = TokenGrid::unstack(&store.read(&key)?)?;
        views.insert(view, aggregate_view(&grids, mode)?);
    }
    assemble_study(&views)
}
