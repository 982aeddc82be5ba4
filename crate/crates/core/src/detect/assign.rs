use serde::{Deserialize, Serialize};

use super::{iou, BBox};
use crate::rng::Xoshiro256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorLabel {
    /// Matched to the ground-truth box with this index.
    Positive(usize),
    Negative,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignConfig {
    pub pos_iou: f64,
    pub neg_iou: f64,
    /// Negatives kept per positive; `None` keeps every negative.
    pub neg_ratio: Option<f64>,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self { pos_iou: 0.5, neg_iou: 0.4, neg_ratio: Some(3.0) }
    }
}

/// Label every anchor against the ground-truth boxes.
///
/// IoU ≥ `pos_iou` is positive (to the best box, lowest index on ties),
/// IoU < `neg_iou` negative, anything between ignored. Each box then claims
/// its best anchor (lowest index on ties) as positive, later boxes
/// overriding earlier ones. Finally negatives are thinned uniformly at
/// random to `⌊neg_ratio·positives⌋`.
pub fn assign_anchors(anchors: &[BBox], gts: &[BBox], cfg: &AssignConfig, seed: u64) -> Vec<AnchorLabel> {
    assert!(cfg.neg_iou < cfg.pos_iou, "negative threshold must be below positive threshold");
    let mut best_anchor: Vec<(f64, usize)> = vec![(0.0, usize::MAX); gts.len()];
    let mut labels: Vec<AnchorLabel> = anchors
        .iter()
        .enumerate()
        .map(|(a, anchor)| {
            let mut best = (0.0, usize::MAX);
            for (g, gt) in gts.iter().enumerate() {
                let v = iou(anchor, gt);
                if v > best.0 || best.1 == usize::MAX {
                    best = (v, g);
                }
                if v > best_anchor[g].0 || best_anchor[g].1 == usize::MAX {
                    best_anchor[g] = (v, a);
                }
            }
            if best.1 != usize::MAX && best.0 >= cfg.pos_iou {
                AnchorLabel::Positive(best.1)
            } else if best.0 < cfg.neg_iou {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();
    for (g, &(v, a)) in best_anchor.iter().enumerate() {
        if a != usize::MAX && v > 0.0 {
            labels[a] = AnchorLabel::Positive(g);
        }
    }
    if let Some(ratio) = cfg.neg_ratio {
        let positives = labels.iter().filter(|l| matches!(l, AnchorLabel::Positive(_))).count();
        subsample_negatives(&mut labels, (ratio * positives as f64).floor() as usize, seed);
    }
    labels
}

/// Keep a uniformly random `keep` of the negatives, turning the rest into
/// `Ignore`.
pub fn subsample_negatives(labels: &mut [AnchorLabel], keep: usize, seed: u64) {
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == AnchorLabel::Negative).collect();
    if neg.len() <= keep {
        return;
    }
    let mut rng = Xoshiro256::seed_from_u64(seed);
    for i in 0..keep {
        let j = i + rng.index(neg.len() - i);
        neg.swap(i, j);
    }
    for &i in &neg[keep..] {
        labels[i] = AnchorLabel::Ignore;
    }
}
