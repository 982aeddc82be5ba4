//! Evaluation statistics: bootstrap intervals, AUROC, DeLong and McNemar
//! tests, Benjamini-Hochberg correction and demographic subgroup tables.

mod auroc;
mod bh;
mod bootstrap;
mod delong;
mod mcnemar;
pub mod special;
mod subgroup;

pub use auroc::{auroc, auroc_pairs};
pub use bh::{benjamini_hochberg, BhResult};
pub use bootstrap::{bootstrap_ci, percentile, BootstrapConfig, Interval, ResampleUnit};
pub use delong::{delong_test, structural_components, DelongResult};
pub use mcnemar::{mcnemar_counts, mcnemar_test, PairedOutcomes};
pub use subgroup::{
    age_band, subgroup_table, GroupKey, GroupRow, StratumCell, SubgroupSample, SubgroupTable, AGE_BANDS,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("only one class present")]
    SingleClass,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
}
