use serde::{Deserialize, Serialize};

use super::loss::sigmoid;
use super::{decode_box, AnchorSet, BBox, Detection, LevelMap, Pyramid, ANCHORS_PER_LOCATION};
use crate::model::FRAME;
use crate::rng::Xoshiro256;
use crate::train::LinearHead;

/// Outputs per location: one logit per anchor shape, then four deltas per
/// shape.
pub const HEAD_OUTPUTS: usize = ANCHORS_PER_LOCATION * 5;

/// Shared per-location affine predictor (a 1×1 convolution).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectHead {
    pub linear: LinearHead,
}

impl DetectHead {
    /// Small random weights; classification bias at the 1% foreground prior.
    pub fn init(channels: usize, seed: u64) -> Self {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let mut linear = LinearHead::zeros(channels, HEAD_OUTPUTS);
        for w in linear.weights_mut() {
            *w = 0.01 * rng.normal();
        }
        let prior = -((1.0 - 0.01f64) / 0.01).ln();
        linear.bias_mut()[..ANCHORS_PER_LOCATION].iter_mut().for_each(|b| *b = prior);
        Self { linear }
    }

    pub fn logit_index(shape: usize) -> usize {
        shape
    }

    pub fn delta_index(shape: usize, k: usize) -> usize {
        ANCHORS_PER_LOCATION + 4 * shape + k
    }

    /// Head outputs at every location of the pyramid, flat in anchor order.
    pub fn predict(&self, pyr: &Pyramid) -> HeadOutputs {
        let p = &pyr.projection;
        let w = self.linear.weights();
        let b = self.linear.bias();
        // W·(P·x + c) + b folded into one map for the token-width levels.
        let mut fused_w = vec![0.0; HEAD_OUTPUTS * p.in_dim];
        let mut fused_b = b.to_vec();
        for o in 0..HEAD_OUTPUTS {
            let row = &w[o * p.out_dim..(o + 1) * p.out_dim];
            for (c, &wc) in row.iter().enumerate() {
                fused_b[o] += wc * p.bias[c];
                let prow = &p.weights[c * p.in_dim..(c + 1) * p.in_dim];
                for (f, pv) in fused_w[o * p.in_dim..(o + 1) * p.in_dim].iter_mut().zip(prow) {
                    *f += wc * pv;
                }
            }
        }
        let mut out = HeadOutputs::default();
        let mut z = [0.0; HEAD_OUTPUTS];
        for level in &pyr.levels {
            let (size, data, width, mat, bias) = match level {
                LevelMap::Native { size, data } => (*size, data, p.in_dim, &fused_w[..], &fused_b[..]),
                LevelMap::Projected { size, data } => (*size, data, p.out_dim, w, b),
            };
            for loc in 0..size * size {
                let x = &data[loc * width..(loc + 1) * width];
                for (o, zo) in z.iter_mut().enumerate() {
                    *zo = bias[o]
                        + mat[o * width..(o + 1) * width].iter().zip(x).map(|(a, v)| a * *v as f64).sum::<f64>();
                }
                for s in 0..ANCHORS_PER_LOCATION {
                    out.logits.push(z[Self::logit_index(s)]);
                    out.deltas.push(std::array::from_fn(|k| z[Self::delta_index(s, k)]));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeadOutputs {
    pub logits: Vec<f64>,
    pub deltas: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub score_floor: f64,
    pub top_k: usize,
    pub nms_iou: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { score_floor: 0.05, top_k: 1000, nms_iou: 0.1 }
    }
}

/// Top-scoring anchors decoded, clipped to the frame and suppressed.
pub fn slice_detections(
    anchors: &AnchorSet,
    outputs: &HeadOutputs,
    cfg: &PostprocessConfig,
    slice_index: u32,
) -> Vec<Detection> {
    let mut cand: Vec<(f64, usize)> = outputs
        .logits
        .iter()
        .enumerate()
        .map(|(i, &z)| (sigmoid(z), i))
        .filter(|&(s, _)| s >= cfg.score_floor)
        .collect();
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    cand.truncate(cfg.top_k);
    let dets: Vec<Detection> = cand
        .into_iter()
        .filter_map(|(score, i)| {
            let bbox: BBox = decode_box(&anchors.boxes[i], &outputs.deltas[i]).ok()?.clip(FRAME as f64);
            (bbox.is_finite() && bbox.w > 1.0 && bbox.h > 1.0).then_some(Detection { bbox, score, slice_index })
        })
        .collect();
    super::nms(&dets, cfg.nms_iou)
}
