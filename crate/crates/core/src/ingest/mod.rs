//! Getting pixels and labels into the pipeline.
//!
//! Volumes are pulled from a DICOMweb archive (QIDO-RS listing plus WADO-RS
//! instance retrieval) through a bearer-token, allow-listed path, kept in a
//! bounded LRU cache on local disk, and prepared into 518×518 slices in
//! `[0, 1]`. Report text is mined for BI-RADS density, and synthetic
//! phantoms stand in for real studies at desk scale.

mod cache;
mod dicomweb;
mod phantom;
mod prefetch;
mod prepare;
mod raw;
mod report;
pub mod stub;

pub use cache::{cache_key, CacheConfig, VolumeCache, MAX_PREFETCH_DEPTH};
pub use dicomweb::{
    Clock, DicomWebClient, FakeClock, HttpResponse, RemoteSource, RetryPolicy, SystemClock, Transport, UreqTransport,
    VolumeSource,
};
pub use phantom::{
    generate_cohort, generate_phantom, phantom_for_volume, CohortSpec, LesionSpec, Phantom, PhantomSpec,
};
pub use prefetch::Prefetcher;
pub use prepare::{bilinear_resize, prepare_slice, PreparedSlice, RawImage};
pub use raw::{decode_volume, encode_slice, RAW_MAGIC};
pub use report::parse_density_report;

use crate::model::DensityCategory;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("authentication rejected by {0}")]
    Auth(String),
    #[error("study {0} is outside the allow-list")]
    Policy(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("item of {size} bytes exceeds cache capacity {capacity}")]
    Capacity { size: u64, capacity: u64 },
    #[error("invalid cache config: {0}")]
    Config(String),
    #[error("image has no finite pixels")]
    EmptyImage,
    #[error("no density phrase found")]
    NoMatch,
    #[error("conflicting density phrases: {0:?}")]
    Ambiguous(Vec<DensityCategory>),
    #[error("malformed payload: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IngestError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, IngestError::Transport(_))
    }
}
