//! Five-year discrete-time risk head.
//!
//! Raw outputs `z` become yearly hazards `h = softplus(z)` and cumulative
//! risk `R_k = 1 − exp(−Σ_{j≤k} h_j)`, which is non-decreasing for any `z`.
//! Censored years are masked out of the BCE loss.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embeddings::{load_study_features, AggregationMode, EmbedError, EmbeddingStore, StudyFeatures};
use crate::model::{Dataset, DensityCategory, Outcome, Split};
use crate::rng::Xoshiro256;
use crate::stats::{auroc, bootstrap_ci, BootstrapConfig, Interval};
use crate::train::{fit, AdamWConfig, FitConfig, LinearHead, Standardizer};

pub const YEARS: usize = 5;
const P_MIN: f64 = 1e-7;
const P_MAX: f64 = 1.0 - 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum RiskError {
    #[error("event year {0:?} outside 1..=5")]
    InvalidEventYear(Option<u32>),
    #[error("record {0} has no observed year")]
    Unusable(String),
    #[error("every year is masked")]
    AllMasked,
    #[error("training split needs at least one event and one event-free record")]
    DegenerateSplit,
    #[error("feature width {got} does not match head width {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Labels and mask for one exam. `labels[k]` is "cancer by year k+1".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub exam_id: String,
    pub event: bool,
    pub event_year: Option<u32>,
    pub followup_years: f64,
    pub labels: [bool; YEARS],
    pub mask: [bool; YEARS],
}

impl SurvivalRecord {
    pub fn observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn build_record(exam_id: &str, outcome: &Outcome) -> Result<SurvivalRecord, RiskError> {
    let (labels, mask) = if outcome.event {
        let year = match outcome.event_year {
            Some(y @ 1..=5) => y as usize,
            other => return Err(RiskError::InvalidEventYear(other)),
        };
        (std::array::from_fn(|k| k + 1 >= year), [true; YEARS])
    } else {
        let observed = outcome.followup_years.max(0.0).floor() as usize;
        if observed == 0 {
            return Err(RiskError::Unusable(exam_id.to_string()));
        }
        ([false; YEARS], std::array::from_fn(|k| k < observed))
    };
    Ok(SurvivalRecord {
        exam_id: exam_id.to_string(),
        event: outcome.event,
        event_year: outcome.event_year,
        followup_years: outcome.followup_years,
        labels,
        mask,
    })
}

/// Cumulative risk for years 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve(pub [f64; YEARS]);

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn cumulative_hazard(z: &[f64]) -> [f64; YEARS] {
    let mut s = [0.0; YEARS];
    let mut acc = 0.0;
    for k in 0..YEARS {
        acc += softplus(z[k]);
        s[k] = acc;
    }
    s
}

pub fn hazards_to_risk(z: &[f64]) -> RiskCurve {
    RiskCurve(cumulative_hazard(z).map(|s| -(-s).exp_m1()))
}

/// Masked BCE over the cumulative risks and its gradient with respect to
/// the raw outputs, normalised by the number of observed years.
pub fn masked_bce(z: &[f64], labels: &[bool; YEARS], mask: &[bool; YEARS]) -> Result<(f64, [f64; YEARS]), RiskError> {
    let observed = mask.iter().filter(|&&m| m).count();
    if observed == 0 {
        return Err(RiskError::AllMasked);
    }
    let norm = 1.0 / observed as f64;
    let s = cumulative_hazard(z);
    let mut loss = 0.0;
    // dL/dS_k, using dR/dS = 1 − R.
    let mut g_s = [0.0; YEARS];
    for k in 0..YEARS {
        if !mask[k] {
            continue;
        }
        let r = -(-s[k]).exp_m1();
        let survive = (-s[k]).exp();
        let clamped = !(P_MIN..=P_MAX).contains(&r);
        if labels[k] {
            loss -= r.clamp(P_MIN, P_MAX).ln();
            if !clamped {
                g_s[k] = -norm * survive / r;
            }
        } else {
            loss -= if clamped { (1.0 - r.clamp(P_MIN, P_MAX)).ln() } else { -s[k] };
            if !clamped {
                g_s[k] = norm;
            }
        }
    }
    let mut grad = [0.0; YEARS];
    let mut tail = 0.0;
    for k in (0..YEARS).rev() {
        tail += g_s[k];
        grad[k] = tail * sigmoid(z[k]);
    }
    Ok((loss * norm, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSample {
    pub features: StudyFeatures,
    pub record: SurvivalRecord,
    pub density: Option<DensityCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub mode: AggregationMode,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adamw: AdamWConfig,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            mode: AggregationMode::PatchMeanStd,
            seed: 0,
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            adamw: AdamWConfig::default(),
        }
    }
}

/// Linear hazard head with its input normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardHead {
    pub standardizer: Standardizer,
    pub head: LinearHead,
}

impl HazardHead {
    pub fn predict(&self, features: &StudyFeatures) -> Result<RiskCurve, RiskError> {
        if features.dim() != self.head.inputs {
            return Err(RiskError::DimMismatch { expected: self.head.inputs, got: features.dim() });
        }
        let z = self.head.forward(&self.standardizer.apply(features.as_slice())).expect("width checked");
        Ok(hazards_to_risk(&z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskCurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_mean_auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRun {
    pub config: RiskConfig,
    /// Checkpoint with the lowest validation loss.
    pub by_loss: HazardHead,
    pub by_loss_epoch: usize,
    /// Checkpoint with the highest mean validation AUROC.
    pub by_auroc: HazardHead,
    pub by_auroc_epoch: usize,
    pub validation_exam_ids: Vec<String>,
    pub curve: Vec<RiskCurvePoint>,
}

/// Equal numbers of event and event-free records, the larger group
/// subsampled with `seed`. Order follows the input.
pub fn balance_validation(samples: &[RiskSample], seed: u64) -> Vec<usize> {
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&i| samples[i].record.event);
    let k = pos.len().min(neg.len());
    let mut rng = Xoshiro256::seed_from_u64(seed);
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    let mut keep: Vec<usize> = pos[..k].iter().chain(&neg[..k]).copied().collect();
    keep.sort_unstable();
    keep
}

fn year_aurocs(curves: &[RiskCurve], records: &[&SurvivalRecord]) -> [Option<f64>; YEARS] {
    std::array::from_fn(|k| {
        let (scores, labels): (Vec<f64>, Vec<bool>) =
            curves.iter().zip(records).filter(|(_, r)| r.mask[k]).map(|(c, r)| (c.0[k], r.labels[k])).unzip();
        auroc(&scores, &labels).ok()
    })
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn train_risk(train: &[RiskSample], val: &[RiskSample], cfg: &RiskConfig) -> Result<RiskRun, RiskError> {
    let events = train.iter().filter(|s| s.record.event).count();
    if events == 0 || events == train.len() {
        return Err(RiskError::DegenerateSplit);
    }
    let dim = train[0].features.dim();
    if let Some(bad) = train.iter().chain(val).find(|s| s.features.dim() != dim) {
        return Err(RiskError::DimMismatch { expected: dim, got: bad.features.dim() });
    }
    let standardizer = Standardizer::fit(train.iter().map(|s| s.features.as_slice()));
    let xs: Vec<Vec<f64>> = train.iter().map(|s| standardizer.apply(s.features.as_slice())).collect();
    let val_idx = balance_validation(val, cfg.seed ^ 0x5EED_BA1A);
    let vx: Vec<Vec<f64>> = val_idx.iter().map(|&i| standardizer.apply(val[i].features.as_slice())).collect();
    let vrec: Vec<&SurvivalRecord> = val_idx.iter().map(|&i| &val[i].record).collect();

    let mut head = LinearHead::init(dim, YEARS, &mut Xoshiro256::seed_from_u64(cfg.seed));
    let fit_cfg =
        FitConfig { epochs: cfg.epochs, batch_size: cfg.batch_size, lr: cfg.lr, adamw: cfg.adamw, seed: cfg.seed };
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best_loss: Option<(f64, usize, LinearHead)> = None;
    let mut best_auc: Option<(f64, usize, LinearHead)> = None;
    fit(
        &mut head,
        xs.len(),
        &fit_cfg,
        |h, batch, grad| {
            let mut loss = 0.0;
            for &i in batch {
                let z = h.forward(&xs[i]).unwrap();
                let r = &train[i].record;
                let (l, gz) = masked_bce(&z, &r.labels, &r.mask).expect("records have an observed year");
                h.accumulate_grad(&xs[i], &gz, grad);
                loss += l;
            }
            loss
        },
        |report, h| {
            let (val_loss, val_auc) = if vx.is_empty() {
                (None, None)
            } else {
                let zs: Vec<Vec<f64>> = vx.iter().map(|x| h.forward(x).unwrap()).collect();
                let loss = zs.iter().zip(&vrec).map(|(z, r)| masked_bce(z, &r.labels, &r.mask).unwrap().0).sum::<f64>()
                    / zs.len() as f64;
                let curves: Vec<RiskCurve> = zs.iter().map(|z| hazards_to_risk(z)).collect();
                (Some(loss), mean_defined(&year_aurocs(&curves, &vrec)))
            };
            curve.push(RiskCurvePoint {
                epoch: report.epoch,
                train_loss: report.train_loss,
                val_loss,
                val_mean_auroc: val_auc,
            });
            let l = val_loss.unwrap_or(f64::NEG_INFINITY);
            if best_loss.as_ref().is_none_or(|(b, _, _)| l <= *b) {
                best_loss = Some((l, report.epoch, h.clone()));
            }
            let a = val_auc.unwrap_or(f64::INFINITY);
            if best_auc.as_ref().is_none_or(|(b, _, _)| a >= *b) {
                best_auc = Some((a, report.epoch, h.clone()));
            }
        },
    );
    let wrap = |h: LinearHead| HazardHead { standardizer: standardizer.clone(), head: h };
    let (by_loss_epoch, by_loss) = best_loss.map_or((0, head.clone()), |(_, e, h)| (e, h));
    let (by_auroc_epoch, by_auroc) = best_auc.map_or((0, head), |(_, e, h)| (e, h));
    Ok(RiskRun {
        config: cfg.clone(),
        by_loss: wrap(by_loss),
        by_loss_epoch,
        by_auroc: wrap(by_auroc),
        by_auroc_epoch,
        validation_exam_ids: val_idx.iter().map(|&i| val[i].record.exam_id.clone()).collect(),
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearAuroc {
    pub year: usize,
    pub n: usize,
    pub positives: usize,
    /// `None` when only one class is observed this year.
    pub auroc: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEval {
    pub years: Vec<YearAuroc>,
    /// Unweighted mean over the years with a defined AUROC.
    pub macro_auroc: Option<Interval>,
    pub years_in_macro: usize,
}

/// Year-specific AUROC with bootstrap intervals, computed from curves.
pub fn eval_curves(curves: &[RiskCurve], records: &[&SurvivalRecord], cfg: &BootstrapConfig) -> RiskEval {
    let point = year_aurocs(curves, records);
    let years = (0..YEARS)
        .map(|k| {
            let idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].mask[k]).collect();
            let positives = idx.iter().filter(|&&i| records[i].labels[k]).count();
            let auroc_ci = point[k].map(|p| {
                let mut ci = bootstrap_ci(
                    idx.len(),
                    |sel| {
                        let (s, l): (Vec<f64>, Vec<bool>) =
                            sel.iter().map(|&j| (curves[idx[j]].0[k], records[idx[j]].labels[k])).unzip();
                        auroc(&s, &l).unwrap_or(f64::NAN)
                    },
                    cfg,
                )
                .unwrap_or(Interval { point: p, lo: p, hi: p });
                ci.point = p;
                ci
            });
            YearAuroc { year: k + 1, n: idx.len(), positives, auroc: auroc_ci }
        })
        .collect();
    let defined: Vec<usize> = (0..YEARS).filter(|&k| point[k].is_some()).collect();
    let macro_auroc = mean_defined(&point).map(|p| {
        let ci = bootstrap_ci(
            records.len(),
            |sel| {
                let c: Vec<RiskCurve> = sel.iter().map(|&i| curves[i]).collect();
                let r: Vec<&SurvivalRecord> = sel.iter().map(|&i| records[i]).collect();
                let a = year_aurocs(&c, &r);
                if defined.iter().any(|&k| a[k].is_none()) {
                    return f64::NAN;
                }
                defined.iter().map(|&k| a[k].unwrap()).sum::<f64>() / defined.len() as f64
            },
            cfg,
        );
        let mut ci = ci.unwrap_or(Interval { point: p, lo: p, hi: p });
        ci.point = p;
        ci
    });
    RiskEval { years, macro_auroc, years_in_macro: defined.len() }
}

pub fn eval_risk(head: &HazardHead, samples: &[RiskSample], cfg: &BootstrapConfig) -> Result<RiskEval, RiskError> {
    let curves = samples.iter().map(|s| head.predict(&s.features)).collect::<Result<Vec<_>, _>>()?;
    let records: Vec<&SurvivalRecord> = samples.iter().map(|s| &s.record).collect();
    Ok(eval_curves(&curves, &records, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGroupRisk {
    pub group: DensityCategory,
    pub n: usize,
    pub events: usize,
    /// Set when `events` is below the reporting minimum; `eval` is then absent.
    pub flagged: bool,
    pub eval: Option<RiskEval>,
}

/// `eval_risk` per density category. Samples without a category are skipped.
pub fn subgroup_risk(
    head: &HazardHead,
    samples: &[RiskSample],
    min_events: usize,
    cfg: &BootstrapConfig,
) -> Result<Vec<DensityGroupRisk>, RiskError> {
    let mut groups: BTreeMap<usize, Vec<RiskSample>> = BTreeMap::new();
    for s in samples {
        if let Some(d) = s.density {
            groups.entry(d.rank()).or_default().push(s.clone());
        }
    }
    groups
        .into_iter()
        .map(|(rank, members)| {
            let events = members.iter().filter(|s| s.record.event).count();
            let flagged = events < min_events.max(1);
            let eval = if flagged { None } else { Some(eval_risk(head, &members, cfg)?) };
            Ok(DensityGroupRisk {
                group: DensityCategory::from_rank(rank).unwrap(),
                n: members.len(),
                events,
                flagged,
                eval,
            })
        })
        .collect()
}

/// Usable risk samples for one split; unusable or unlabelled exams are
/// skipped and counted.
pub fn load_risk_split(
    store: &EmbeddingStore,
    dataset: &Dataset,
    split: Split,
    mode: AggregationMode,
) -> Result<(Vec<RiskSample>, usize), RiskError> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for exam in dataset.exams_in(split) {
        let Some(outcome) = dataset.outcomes.get(&exam.exam_id) else {
            skipped += 1;
            continue;
        };
        let record = match build_record(&exam.exam_id, outcome) {
            Ok(r) => r,
            Err(RiskError::Unusable(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let features = load_study_features(store, exam, mode)?;
        out.push(RiskSample { features, record, density: dataset.density_labels.get(&exam.exam_id).copied() });
    }
    Ok((out, skipped))
}
