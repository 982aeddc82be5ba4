use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::rng::Xoshiro256;

/// Unit drawn with replacement in each repetition.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleUnit {
    #[default]
    Sample,
    /// Draw whole clusters (e.g. patients); one label per sample.
    Cluster(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub repetitions: usize,
    pub seed: u64,
    pub level: f64,
    #[serde(default)]
    pub unit: ResampleUnit,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { repetitions: 1000, seed: 0, level: 0.95, unit: ResampleUnit::Sample }
    }
}

impl BootstrapConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Linear-interpolated quantile of sorted data (`q` in [0, 1]).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap interval for `metric`, which receives the indices of
/// one resample (with repeats).
///
/// Repetition `r` draws from a generator seeded with `seed + r`, so the
/// interval does not depend on how repetitions are scheduled across threads.
/// Repetitions where the metric is undefined (NaN) are dropped.
pub fn bootstrap_ci<F>(n: usize, metric: F, cfg: &BootstrapConfig) -> Result<Interval, StatsError>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if n == 0 {
        return Err(StatsError::EmptyInput);
    }
    if cfg.repetitions == 0 {
        return Err(StatsError::Invalid("repetitions must be >= 1".into()));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(StatsError::Invalid(format!("level {} outside (0,1)", cfg.level)));
    }
    let all: Vec<usize> = (0..n).collect();
    let point = metric(&all);

    let clusters: Option<Vec<Vec<usize>>> = match &cfg.unit {
        ResampleUnit::Sample => None,
        ResampleUnit::Cluster(labels) => {
            if labels.len() != n {
                return Err(StatsError::LengthMismatch(labels.len(), n));
            }
            let mut groups: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
            for (i, l) in labels.iter().enumerate() {
                groups.entry(l).or_default().push(i);
            }
            Some(groups.into_values().collect())
        }
    };

    let mut stats: Vec<f64> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut rng = Xoshiro256::seed_from_u64(cfg.seed.wrapping_add(rep as u64));
            let idx: Vec<usize> = match &clusters {
                None => (0..n).map(|_| rng.index(n)).collect(),
                Some(groups) => {
                    let mut v = Vec::with_capacity(n);
                    for _ in 0..groups.len() {
                        v.extend_from_slice(&groups[rng.index(groups.len())]);
                    }
                    v
                }
            };
            metric(&idx)
        })
        .filter(|v| !v.is_nan())
        .collect();
    if stats.is_empty() {
        return Err(StatsError::Invalid("metric undefined on every resample".into()));
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - cfg.level) / 2.0;
    Ok(Interval { point, lo: percentile(&stats, tail), hi: percentile(&stats, 1.0 - tail) })
}

/// Accuracy over a resample of boolean outcomes.
pub(crate) fn accuracy_of(correct: &[bool]) -> impl Fn(&[usize]) -> f64 + Sync + '_ {
    move |idx: &[usize]| idx.iter().filter(|&&i| correct[i]).count() as f64 / idx.len() as f64
}
