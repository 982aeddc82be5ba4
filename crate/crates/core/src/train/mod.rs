//! Shared optimization kernel for the linear heads.
//!
//! Everything runs in `f64` and single-threaded so that a `(seed, data)`
//! pair always yields bit-identical weights.

mod adamw;
mod checkpoint;
mod fit;
mod gradcheck;
mod linear;
mod loss;
mod schedule;
mod search;
mod standardize;

pub use adamw::{adamw_step, AdamWConfig, OptimState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader,
};
pub use fit::{fit, EpochReport, FitConfig};
pub use gradcheck::{grad_check, relative_error};
pub use linear::LinearHead;
pub use loss::{softmax, softmax_ce};
pub use schedule::{cosine_lr, ScheduleConfig};
pub use search::{log_uniform_search, SearchTrial};
pub use standardize::Standardizer;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrainError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("shape mismatch: params {params}, grads {grads}, moments {moments}")]
    ShapeMismatch { params: usize, grads: usize, moments: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
