//! Four-class breast-density probe: training with stratified data
//! fractions, evaluation, confusion matrices and their derived rates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embeddings::{load_study_features, AggregationMode, EmbedError, EmbeddingStore, StudyFeatures};
use crate::model::{Dataset, DensityCategory, Split};
use crate::rng::Xoshiro256;
use crate::stats::{bootstrap_ci, BootstrapConfig, Interval};
use crate::train::{fit, softmax_ce, AdamWConfig, FitConfig, LinearHead, Standardizer};

pub const CLASSES: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum DensityError {
    #[error("no training samples for class {0:?}")]
    EmptyClass(DensityCategory),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("feature width {got} does not match head width {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySample {
    pub exam_id: String,
    pub features: StudyFeatures,
    pub label: DensityCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    pub mode: AggregationMode,
    pub fraction: f64,
    /// Seeds the fraction subset only, so one subset can be shared by runs
    /// that differ in aggregation mode or training seed.
    pub fraction_seed: u64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adamw: AdamWConfig,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            mode: AggregationMode::PatchMeanStd,
            fraction: 1.0,
            fraction_seed: 0,
            seed: 0,
            epochs: 75,
            batch_size: 64,
            lr: 1e-3,
            adamw: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRun {
    pub config: DensityConfig,
    pub standardizer: Standardizer,
    /// Weights from the epoch with the lowest validation loss (the last
    /// epoch when there is no validation set).
    pub head: LinearHead,
    pub best_epoch: usize,
    pub train_exam_ids: Vec<String>,
    pub curve: Vec<CurvePoint>,
}

impl DensityRun {
    pub fn logits(&self, features: &StudyFeatures) -> Result<Vec<f64>, DensityError> {
        if features.dim() != self.head.inputs {
            return Err(DensityError::DimMismatch { expected: self.head.inputs, got: features.dim() });
        }
        let x = self.standardizer.apply(features.as_slice());
        Ok(self.head.forward(&x).expect("width checked"))
    }

    /// Most likely category; ties go to the lower rank.
    pub fn predict(&self, features: &StudyFeatures) -> Result<DensityCategory, DensityError> {
        let z = self.logits(features)?;
        Ok(DensityCategory::from_rank(LinearHead::argmax(&z)).unwrap())
    }
}

/// Indices of a per-class subset holding `round(fraction·support)` samples
/// of each class (at least one where the class is present), sorted.
pub fn stratified_fraction(labels: &[DensityCategory], fraction: f64, seed: u64) -> Vec<usize> {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let mut by_class: [Vec<usize>; CLASSES] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class[l.rank()].push(i);
    }
    let mut out = Vec::new();
    for members in by_class.iter_mut() {
        if members.is_empty() {
            continue;
        }
        let take = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len());
        rng.shuffle(members);
        out.extend_from_slice(&members[..take]);
    }
    out.sort_unstable();
    out
}

fn mean_ce(run_head: &LinearHead, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let total: f64 = xs.iter().zip(ys).map(|(x, &y)| softmax_ce(&run_head.forward(x).unwrap(), y).0).sum();
    total / xs.len() as f64
}

/// Train the linear probe on a stratified fraction of `train`, selecting
/// the epoch with minimum loss on `val`.
pub fn train_density(
    train: &[DensitySample],
    val: &[DensitySample],
    cfg: &DensityConfig,
) -> Result<DensityRun, DensityError> {
    if !(cfg.fraction > 0.0 && cfg.fraction <= 1.0) {
        return Err(DensityError::BadFraction(cfg.fraction));
    }
    let labels: Vec<DensityCategory> = train.iter().map(|s| s.label).collect();
    let subset = stratified_fraction(&labels, cfg.fraction, cfg.fraction_seed);
    let mut present = [false; CLASSES];
    for &i in &subset {
        present[labels[i].rank()] = true;
    }
    if let Some(missing) = (0..CLASSES).find(|&c| !present[c]) {
        return Err(DensityError::EmptyClass(DensityCategory::from_rank(missing).unwrap()));
    }
    let dim = train[subset[0]].features.dim();
    for s in subset.iter().map(|&i| &train[i]).chain(val) {
        if s.features.dim() != dim {
            return Err(DensityError::DimMismatch { expected: dim, got: s.features.dim() });
        }
    }
    let standardizer = Standardizer::fit(subset.iter().map(|&i| train[i].features.as_slice()));
    let xs: Vec<Vec<f64>> = subset.iter().map(|&i| standardizer.apply(train[i].features.as_slice())).collect();
    let ys: Vec<usize> = subset.iter().map(|&i| labels[i].rank()).collect();
    let vx: Vec<Vec<f64>> = val.iter().map(|s| standardizer.apply(s.features.as_slice())).collect();
    let vy: Vec<usize> = val.iter().map(|s| s.label.rank()).collect();

    let mut head = LinearHead::init(dim, CLASSES, &mut Xoshiro256::seed_from_u64(cfg.seed));
    let fit_cfg =
        FitConfig { epochs: cfg.epochs, batch_size: cfg.batch_size, lr: cfg.lr, adamw: cfg.adamw, seed: cfg.seed };
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, LinearHead)> = None;
    fit(
        &mut head,
        xs.len(),
        &fit_cfg,
        |h, batch, grad| {
            let mut loss = 0.0;
            for &i in batch {
                let (l, gz) = softmax_ce(&h.forward(&xs[i]).unwrap(), ys[i]);
                h.accumulate_grad(&xs[i], &gz, grad);
                loss += l;
            }
            loss
        },
        |report, h| {
            let val_loss = (!vx.is_empty()).then(|| mean_ce(h, &vx, &vy));
            curve.push(CurvePoint { epoch: report.epoch, train_loss: report.train_loss, val_loss });
            let score = val_loss.unwrap_or(f64::NEG_INFINITY);
            if best.as_ref().is_none_or(|(b, _, _)| score <= *b) {
                best = Some((score, report.epoch, h.clone()));
            }
        },
    );
    let (best_epoch, head) = match best {
        Some((_, e, h)) => (e, h),
        None => (0, head),
    };
    Ok(DensityRun {
        config: cfg.clone(),
        standardizer,
        head,
        best_epoch,
        train_exam_ids: subset.iter().map(|&i| train[i].exam_id.clone()).collect(),
        curve,
    })
}

/// 4×4 counts, rows reference and columns prediction, in rank order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; CLASSES]; CLASSES]);

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (DensityCategory, DensityCategory)>) -> Self {
        let mut m = Self::default();
        for (reference, predicted) in pairs {
            m.0[reference.rank()][predicted.rank()] += 1;
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.0[class].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let trace: u64 = (0..CLASSES).map(|i| self.0[i][i]).sum();
        trace as f64 / self.total() as f64
    }

    /// Per-class F1; `None` for classes without reference support.
    pub fn f1(&self) -> [Option<f64>; CLASSES] {
        std::array::from_fn(|c| {
            if self.support(c) == 0 {
                return None;
            }
            let tp = self.0[c][c] as f64;
            let predicted: u64 = (0..CLASSES).map(|r| self.0[r][c]).sum();
            let fp = predicted as f64 - tp;
            let fn_ = self.support(c) as f64 - tp;
            Some(2.0 * tp / (2.0 * tp + fp + fn_))
        })
    }

    /// Unweighted mean F1 over classes with support.
    pub fn macro_f1(&self) -> f64 {
        let f: Vec<f64> = self.f1().into_iter().flatten().collect();
        f.iter().sum::<f64>() / f.len() as f64
    }
}

/// Accuracy after merging {A,B} and {C,D}.
pub fn binary_collapse(m: &ConfusionMatrix) -> f64 {
    let mut agree = 0;
    for r in 0..CLASSES {
        for c in 0..CLASSES {
            if (r < 2) == (c < 2) {
                agree += m.0[r][c];
            }
        }
    }
    agree as f64 / m.total() as f64
}

/// Fraction of all predictions more than one rank away from the reference.
pub fn adjacent_error_rate(m: &ConfusionMatrix) -> f64 {
    let mut far = 0;
    for r in 0..CLASSES {
        for c in 0..CLASSES {
            if r.abs_diff(c) > 1 {
                far += m.0[r][c];
            }
        }
    }
    far as f64 / m.total() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEval {
    pub n: usize,
    pub accuracy: Interval,
    pub macro_f1: f64,
    pub f1: [Option<f64>; CLASSES],
    /// Classes left out of the macro average for lack of support.
    pub excluded_classes: Vec<DensityCategory>,
    pub confusion: ConfusionMatrix,
    pub binary_accuracy: f64,
    pub adjacent_error_rate: f64,
    pub predictions: BTreeMap<String, DensityCategory>,
}

pub fn evaluate_density(
    run: &DensityRun,
    test: &[DensitySample],
    bootstrap: &BootstrapConfig,
) -> Result<DensityEval, DensityError> {
    if test.is_empty() {
        return Err(DensityError::EmptyTestSet);
    }
    let preds = test.iter().map(|s| run.predict(&s.features)).collect::<Result<Vec<_>, _>>()?;
    let confusion = ConfusionMatrix::from_pairs(test.iter().map(|s| s.label).zip(preds.iter().copied()));
    let correct: Vec<bool> = test.iter().zip(&preds).map(|(s, p)| s.label == *p).collect();
    let accuracy = bootstrap_ci(
        correct.len(),
        |idx| idx.iter().filter(|&&i| correct[i]).count() as f64 / idx.len() as f64,
        bootstrap,
    )
    .expect("nonempty");
    let f1 = confusion.f1();
    Ok(DensityEval {
        n: test.len(),
        accuracy,
        macro_f1: confusion.macro_f1(),
        f1,
        excluded_classes: (0..CLASSES)
            .filter(|&c| f1[c].is_none())
            .map(|c| DensityCategory::from_rank(c).unwrap())
            .collect(),
        confusion,
        binary_accuracy: binary_collapse(&confusion),
        adjacent_error_rate: adjacent_error_rate(&confusion),
        predictions: test.iter().map(|s| s.exam_id.clone()).zip(preds).collect(),
    })
}

/// Labelled study features for one split; exams without a density label
/// are skipped.
pub fn load_density_split(
    store: &EmbeddingStore,
    dataset: &Dataset,
    split: Split,
    mode: AggregationMode,
) -> Result<Vec<DensitySample>, DensityError> {
    let mut out = Vec::new();
    for exam in dataset.exams_in(split) {
        let Some(&label) = dataset.density_labels.get(&exam.exam_id) else { continue };
        let features = load_study_features(store, exam, mode)?;
        out.push(DensitySample { exam_id: exam.exam_id.clone(), features, label });
    }
    Ok(out)
}
