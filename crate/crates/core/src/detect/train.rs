//! Training and inference for the detection head on frozen token grids.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    aggregate_volume, assign_anchors, build_pyramid, detection_loss, encode_box, froc, generate_anchors,
    slice_detections, AnchorLabel, AnchorSet, AnchorTarget, AssignConfig, BBox, DetectError, DetectHead, Detection,
    FocalConfig, PostprocessConfig, Projection, Pyramid, PyramidSpec, ANCHORS_PER_LOCATION, FP_POINTS_1_TO_5,
};
use crate::embeddings::pixel::PatchEmbedder;
use crate::ingest::{generate_phantom, prepare_slice, PhantomSpec};
use crate::model::{ViewKind, VolumeRef};
use crate::rng::{derive_seed, Xoshiro256};
use crate::train::{adamw_step, cosine_lr, AdamWConfig, OptimState, ScheduleConfig};

/// Frozen projection, stored by its generating seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
}

impl ProjectionSpec {
    pub fn build(&self) -> Projection {
        Projection::seeded(self.in_dim, self.out_dim, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adamw: AdamWConfig,
    pub assign: AssignConfig,
    pub focal: FocalConfig,
    pub smooth_l1_beta: f64,
    /// Classification-to-box loss ratio `ρ`; the box term is weighted `1/ρ`.
    pub cls_box_ratio: f64,
    pub post: PostprocessConfig,
    pub fp_points: Vec<f64>,
    /// Validate every this many epochs.
    pub eval_every: usize,
    /// Stop after this many validations without improvement.
    pub patience: usize,
    /// Negatives cached per positive and slice; each epoch draws from them.
    pub negative_pool: usize,
    pub projection_seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 30,
            batch_size: 256,
            lr: 3e-3,
            adamw: AdamWConfig::default(),
            assign: AssignConfig::default(),
            focal: FocalConfig::default(),
            smooth_l1_beta: 1.0,
            cls_box_ratio: 1.0,
            post: PostprocessConfig::default(),
            fp_points: FP_POINTS_1_TO_5.to_vec(),
            eval_every: 5,
            patience: 3,
            negative_pool: 32,
            projection_seed: 0x9E57,
        }
    }
}

/// One annotated slice: its patch tokens and the lesion boxes on it.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceExample {
    pub volume_id: String,
    pub slice_index: u32,
    /// `37 × 37 × dim`, row-major.
    pub tokens: Vec<f32>,
    pub boxes: Vec<BBox>,
}

/// A whole volume for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeExample {
    pub volume_id: String,
    pub slices: Vec<Vec<f32>>,
    /// Lesion boxes with their slice index.
    pub lesions: Vec<(u32, BBox)>,
}

impl VolumeExample {
    /// Training examples from the annotated slices only.
    pub fn annotated_slices(&self) -> Vec<SliceExample> {
        let mut by_slice: BTreeMap<u32, Vec<BBox>> = BTreeMap::new();
        for (s, b) in &self.lesions {
            by_slice.entry(*s).or_default().push(*b);
        }
        by_slice
            .into_iter()
            .map(|(s, boxes)| SliceExample {
                volume_id: self.volume_id.clone(),
                slice_index: s,
                tokens: self.slices[s as usize].clone(),
                boxes,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectModel {
    pub projection: ProjectionSpec,
    pub head: DetectHead,
    pub post: PostprocessConfig,
}

/// Reusable inference state: anchors and the built projection.
pub struct Detector<'a> {
    pub model: &'a DetectModel,
    pub anchors: AnchorSet,
    projection: Arc<Projection>,
    spec: PyramidSpec,
}

impl<'a> Detector<'a> {
    pub fn new(model: &'a DetectModel) -> Self {
        let spec = PyramidSpec { channels: model.projection.out_dim, ..Default::default() };
        Self { model, anchors: generate_anchors(&spec), projection: Arc::new(model.projection.build()), spec }
    }

    pub fn pyramid(&self, tokens: &[f32]) -> Result<Pyramid, DetectError> {
        build_pyramid(tokens, self.projection.clone(), &self.spec)
    }

    pub fn detect_slice(&self, tokens: &[f32], slice_index: u32) -> Result<Vec<Detection>, DetectError> {
        let outputs = self.model.head.predict(&self.pyramid(tokens)?);
        Ok(slice_detections(&self.anchors, &outputs, &self.model.post, slice_index))
    }

    /// Per-slice detection followed by pooled suppression.
    pub fn detect_volume(&self, slices: &[Vec<f32>]) -> Result<Vec<Detection>, DetectError> {
        let per_slice =
            slices.iter().enumerate().map(|(k, t)| self.detect_slice(t, k as u32)).collect::<Result<Vec<_>, _>>()?;
        Ok(aggregate_volume(&per_slice, self.model.post.nms_iou))
    }
}

/// Average FROC sensitivity of `model` over `volumes`.
pub fn evaluate_volumes(
    model: &DetectModel,
    volumes: &[VolumeExample],
    fp_points: &[f64],
) -> Result<super::FrocResult, DetectError> {
    let det = Detector::new(model);
    let mut gt = BTreeMap::new();
    let mut preds = BTreeMap::new();
    for v in volumes {
        gt.insert(v.volume_id.clone(), v.lesions.iter().map(|(_, b)| *b).collect::<Vec<_>>());
        preds.insert(v.volume_id.clone(), det.detect_volume(&v.slices)?);
    }
    froc(&gt, &preds, fp_points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_average_sensitivity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRun {
    pub config: DetectConfig,
    pub model: DetectModel,
    pub best_epoch: usize,
    pub history: Vec<DetectEpoch>,
}

/// Cached training material for one slice.
struct SliceCache {
    /// Pyramid features at the locations used, `channels` each.
    features: Vec<f32>,
    positives: Vec<(usize, usize, [f64; 4])>,
    negatives: Vec<(usize, usize)>,
}

fn cache_slice(
    ex: &SliceExample,
    anchors: &AnchorSet,
    projection: &Arc<Projection>,
    spec: &PyramidSpec,
    cfg: &DetectConfig,
    seed: u64,
) -> Result<SliceCache, DetectError> {
    let pyr = build_pyramid(&ex.tokens, projection.clone(), spec)?;
    let assign = AssignConfig { neg_ratio: None, ..cfg.assign };
    let labels = assign_anchors(&anchors.boxes, &ex.boxes, &assign, seed);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            AnchorLabel::Positive(g) => pos.push((i, *g)),
            AnchorLabel::Negative => neg.push(i),
            AnchorLabel::Ignore => {}
        }
    }
    let pool = (cfg.negative_pool * pos.len().max(1)).min(neg.len());
    let mut rng = Xoshiro256::seed_from_u64(seed);
    for i in 0..pool {
        let j = i + rng.index(neg.len() - i);
        neg.swap(i, j);
    }
    neg.truncate(pool);
    neg.sort_unstable();

    let offsets = spec.level_offsets();
    let ch = spec.channels;
    let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
    let mut features = Vec::new();
    let mut buf = vec![0.0; ch];
    let mut locate = |anchor: usize, features: &mut Vec<f32>| -> usize {
        let loc = anchor / ANCHORS_PER_LOCATION;
        *slot.entry(loc).or_insert_with(|| {
            let level = offsets.iter().rposition(|&o| o <= loc).unwrap();
            let size = spec.levels[level].size;
            let r = loc - offsets[level];
            pyr.feature(level, r / size, r % size, &mut buf);
            features.extend(buf.iter().map(|&v| v as f32));
            features.len() / ch - 1
        })
    };
    let positives = pos
        .iter()
        .map(|&(a, g)| {
            let target = encode_box(&anchors.boxes[a], &ex.boxes[g])?;
            Ok((locate(a, &mut features), a % ANCHORS_PER_LOCATION, target))
        })
        .collect::<Result<Vec<_>, DetectError>>()?;
    let negatives = neg.iter().map(|&a| (locate(a, &mut features), a % ANCHORS_PER_LOCATION)).collect();
    Ok(SliceCache { features, positives, negatives })
}

pub fn train_detect_head(
    train: &[SliceExample],
    val: &[VolumeExample],
    cfg: &DetectConfig,
) -> Result<DetectRun, DetectError> {
    if train.iter().all(|s| s.boxes.is_empty()) {
        return Err(DetectError::NoAnnotations);
    }
    let dim = train[0].tokens.len() / (crate::embeddings::DINO_PATCHES);
    let spec = PyramidSpec::default();
    let projection_spec = ProjectionSpec { in_dim: dim, out_dim: spec.channels, seed: cfg.projection_seed };
    let projection = Arc::new(projection_spec.build());
    let anchors = generate_anchors(&spec);
    let caches = train
        .iter()
        .filter(|s| !s.boxes.is_empty())
        .enumerate()
        .map(|(i, s)| cache_slice(s, &anchors, &projection, &spec, cfg, derive_seed(cfg.seed, i as u64)))
        .collect::<Result<Vec<_>, _>>()?;

    let ch = spec.channels;
    let mut head = DetectHead::init(ch, cfg.seed);
    let lambda = 1.0 / cfg.cls_box_ratio;
    let ratio = cfg.assign.neg_ratio.unwrap_or(3.0);
    let per_epoch: usize = caches
        .iter()
        .map(|c| c.positives.len() + ((ratio * c.positives.len() as f64) as usize).min(c.negatives.len()))
        .sum();
    let steps = (cfg.epochs * per_epoch.div_ceil(cfg.batch_size.max(1))).max(1) as u64;
    let schedule = ScheduleConfig::new(cfg.lr, steps);
    let mut state = OptimState::new(head.linear.params.len(), cfg.adamw);
    let mut rng = Xoshiro256::seed_from_u64(derive_seed(cfg.seed, 0xE90C));
    let mut step = 0u64;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, DetectHead)> = None;
    let mut stale = 0;
    let mut grad = vec![0.0; head.linear.params.len()];

    for epoch in 0..cfg.epochs {
        // (slice, feature slot, shape, target)
        let mut samples: Vec<(usize, usize, usize, AnchorTarget)> = Vec::with_capacity(per_epoch);
        for (ci, c) in caches.iter().enumerate() {
            samples.extend(c.positives.iter().map(|&(f, s, t)| (ci, f, s, AnchorTarget::Positive(t))));
            let k = ((ratio * c.positives.len() as f64) as usize).min(c.negatives.len());
            let mut idx: Vec<usize> = (0..c.negatives.len()).collect();
            for i in 0..k {
                let j = i + rng.index(idx.len() - i);
                idx.swap(i, j);
            }
            samples.extend(idx[..k].iter().map(|&n| (ci, c.negatives[n].0, c.negatives[n].1, AnchorTarget::Negative)));
        }
        rng.shuffle(&mut samples);
        let mut total = 0.0;
        for batch in samples.chunks(cfg.batch_size.max(1)) {
            let w = head.linear.weights();
            let b = head.linear.bias();
            let mut logits = Vec::with_capacity(batch.len());
            let mut deltas = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &(ci, f, s, t) in batch {
                let x = &caches[ci].features[f * ch..(f + 1) * ch];
                let out =
                    |o: usize| b[o] + w[o * ch..(o + 1) * ch].iter().zip(x).map(|(a, v)| a * *v as f64).sum::<f64>();
                logits.push(out(DetectHead::logit_index(s)));
                deltas.push(std::array::from_fn(|k| out(DetectHead::delta_index(s, k))));
                targets.push(t);
            }
            let loss = detection_loss(&logits, &deltas, &targets, &cfg.focal, cfg.smooth_l1_beta, lambda);
            total += loss.total * batch.len() as f64;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let (gw, gb) = grad.split_at_mut(ch * head.linear.outputs);
            for (j, &(ci, f, s, _)) in batch.iter().enumerate() {
                let x = &caches[ci].features[f * ch..(f + 1) * ch];
                let mut push = |o: usize, g: f64| {
                    if g != 0.0 {
                        gb[o] += g;
                        for (gw, v) in gw[o * ch..(o + 1) * ch].iter_mut().zip(x) {
                            *gw += g * *v as f64;
                        }
                    }
                };
                push(DetectHead::logit_index(s), loss.grad_logits[j]);
                for k in 0..4 {
                    push(DetectHead::delta_index(s, k), loss.grad_deltas[j][k]);
                }
            }
            adamw_step(&mut head.linear.params, &grad, &mut state, cosine_lr(&schedule, step)).expect("fixed shapes");
            step += 1;
        }
        let train_loss = total / samples.len().max(1) as f64;
        let last = epoch + 1 == cfg.epochs;
        let validate = !val.is_empty() && ((epoch + 1) % cfg.eval_every.max(1) == 0 || last);
        let mut val_avg = None;
        if validate {
            let model = DetectModel { projection: projection_spec, head: head.clone(), post: cfg.post };
            let avg = evaluate_volumes(&model, val, &cfg.fp_points)?.average_sensitivity;
            val_avg = Some(avg);
            if best.as_ref().is_none_or(|(b, _, _)| avg > *b) {
                best = Some((avg, epoch, head.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        history.push(DetectEpoch { epoch, train_loss, val_average_sensitivity: val_avg });
        if stale >= cfg.patience.max(1) {
            break;
        }
    }
    let (best_epoch, head) = match best {
        Some((_, e, h)) => (e, h),
        None => (history.len().saturating_sub(1), head),
    };
    Ok(DetectRun {
        config: cfg.clone(),
        model: DetectModel { projection: projection_spec, head, post: cfg.post },
        best_epoch,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSetSpec {
    pub n_slices: u32,
    pub lesions_per_volume: usize,
    pub token_dim: usize,
    pub embed_seed: u64,
    pub lesion_amplitude: f64,
}

impl Default for PhantomSetSpec {
    fn default() -> Self {
        Self { n_slices: 4, lesions_per_volume: 1, token_dim: 16, embed_seed: 7, lesion_amplitude: 1.0 }
    }
}

/// Synthetic volumes with planted lesions, embedded by the pixel patch
/// embedder.
pub fn phantom_volumes(seed: u64, n_volumes: usize, spec: &PhantomSetSpec) -> Result<Vec<VolumeExample>, DetectError> {
    let embedder = PatchEmbedder::new(spec.token_dim, spec.embed_seed);
    (0..n_volumes)
        .map(|i| {
            let volume = VolumeRef {
                patient_id: format!("DP{i:04}"),
                exam_id: format!("DE{i:04}"),
                view: ViewKind::ALL[i % 4],
                n_slices: spec.n_slices,
                acquisition_date: "2020-01-01".into(),
            };
            let mut ps = PhantomSpec::new(volume.clone());
            ps.lesion_count = spec.lesions_per_volume;
            ps.density_rank = i % 4;
            ps.lesion_amplitude = spec.lesion_amplitude;
            let phantom = generate_phantom(derive_seed(seed, i as u64), &ps);
            let slices = (0..phantom.n_slices())
                .map(|k| Ok(embedder.embed(&prepare_slice(&phantom.slice(k))?).patches))
                .collect::<Result<Vec<_>, DetectError>>()?;
            let lesions = phantom.lesions.iter().map(|a| (a.slice_index, BBox::new(a.x, a.y, a.w, a.h))).collect();
            Ok(VolumeExample { volume_id: volume.volume_id(), slices, lesions })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_annotations() {
        let ex = SliceExample { volume_id: "v".into(), slice_index: 0, tokens: vec![0.0; 1369], boxes: vec![] };
        assert!(matches!(train_detect_head(&[ex], &[], &DetectConfig::default()), Err(DetectError::NoAnnotations)));
    }

    #[test]
    fn deterministic_small_run() {
        let vols = phantom_volumes(1, 3, &PhantomSetSpec { n_slices: 3, token_dim: 6, ..Default::default() }).unwrap();
        let train: Vec<SliceExample> = vols.iter().flat_map(|v| v.annotated_slices()).collect();
        let cfg = DetectConfig { epochs: 2, ..Default::default() };
        let a = train_detect_head(&train, &vols[..1], &cfg).unwrap();
        let b = train_detect_head(&train, &vols[..1], &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history.len(), 2);
    }
}
