//! Downstream analysis stack for frozen tomosynthesis foundation-model
//! embeddings.
//!
//! The crate covers everything that happens after a backbone has produced
//! token grids for each slice of a screening exam:
//!
//! - [`model`]: patients, exams, views, density labels and box annotations.
//! - [`ingest`]: DICOMweb retrieval behind an allow-list, a rotating LRU
//!   cache, slice preparation, report parsing and synthetic phantoms.
//! - [`embeddings`]: token grids, view/study aggregation and the binary
//!   embedding store.
//! - [`train`]: the shared optimization kernel (linear head, softmax
//!   cross-entropy, AdamW, cosine schedule, gradient checking).
//! - [`density`], [`risk`], [`detect`]: the three downstream tasks.
//! - [`stats`]: bootstrap intervals, AUROC, DeLong, McNemar,
//!   Benjamini-Hochberg and subgroup tables.
//! - [`cli`]: the `tomo` command line front end.
//!
//! Everything is deterministic given a seed; see [`rng`].

pub mod cli;
pub mod density;
pub mod detect;
pub mod embeddings;
pub mod ingest;
pub mod model;
pub mod risk;
pub mod rng;
pub mod stats;
pub mod train;

pub use model::{BoxAnnotation, Dataset, DensityCategory, Exam, ViewKind, VolumeRef};
pub use rng::Xoshiro256;
