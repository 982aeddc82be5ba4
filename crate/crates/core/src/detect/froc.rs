use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{detection_order, BBox, DetectError, Detection};

/// Operating points used in the results summary.
pub const FP_POINTS_1_TO_4: [f64; 4] = [1.0, 2.0, 3.0, 4.0];
/// Operating points used for early stopping.
pub const FP_POINTS_1_TO_5: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

/// Hit radius around a lesion centre: half the box diagonal, at least 20 px.
pub fn match_radius(gt: &BBox) -> f64 {
    (gt.diagonal() / 2.0).max(20.0)
}

pub fn is_hit(pred: &BBox, gt: &BBox) -> bool {
    let (px, py) = pred.center();
    let (gx, gy) = gt.center();
    (px - gx).hypot(py - gy) <= match_radius(gt)
}

/// TP/FP flag per prediction, in the order given. Each prediction claims
/// the nearest unclaimed lesion within range (lowest index on ties).
pub fn match_volume(preds: &[Detection], gt: &[BBox]) -> Vec<bool> {
    let mut claimed = vec![false; gt.len()];
    preds
        .iter()
        .map(|p| {
            let (px, py) = p.bbox.center();
            let mut best: Option<(f64, usize)> = None;
            for (g, b) in gt.iter().enumerate() {
                if claimed[g] || !is_hit(&p.bbox, b) {
                    continue;
                }
                let (gx, gy) = b.center();
                let d = (px - gx).hypot(py - gy);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, g));
                }
            }
            if let Some((_, g)) = best {
                claimed[g] = true;
            }
            best.is_some()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    /// Detections scoring at least this are kept (`inf` keeps none).
    pub threshold: f64,
    pub mean_fp: f64,
    pub sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocResult {
    pub volumes: usize,
    pub lesions: usize,
    pub fp_points: Vec<f64>,
    pub sensitivities: Vec<f64>,
    pub average_sensitivity: f64,
    pub curve: Vec<FrocPoint>,
}

impl FrocResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fp_per_volume,sensitivity\n");
        for (f, s) in self.fp_points.iter().zip(&self.sensitivities) {
            out.push_str(&format!("{f},{s}\n"));
        }
        out
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("threshold,mean_fp,sensitivity\n");
        for p in &self.curve {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.mean_fp, p.sensitivity));
        }
        out
    }
}

/// Free-response ROC over every distinct score threshold.
///
/// The volumes are the union of the keys of `gt` and `preds`. The
/// sensitivity at `f` false positives per volume is the highest one reached
/// by any threshold whose mean FP count stays within `f`, i.e. that of the
/// lowest such threshold.
pub fn froc(
    gt: &BTreeMap<String, Vec<BBox>>,
    preds: &BTreeMap<String, Vec<Detection>>,
    fp_points: &[f64],
) -> Result<FrocResult, DetectError> {
    let volumes: BTreeSet<&String> = gt.keys().chain(preds.keys()).collect();
    if volumes.is_empty() {
        return Err(DetectError::NoVolumes);
    }
    let lesions: usize = gt.values().map(Vec::len).sum();
    if lesions == 0 {
        return Err(DetectError::NoLesions);
    }
    let empty = Vec::new();
    // Greedy matching in descending score is prefix-stable, so one pass per
    // volume gives the outcome at every threshold.
    let mut flagged: Vec<(Detection, bool)> = Vec::new();
    for v in &volumes {
        let mut p = preds.get(*v).cloned().unwrap_or_default();
        p.sort_by(detection_order);
        let tp = match_volume(&p, gt.get(*v).unwrap_or(&empty));
        flagged.extend(p.into_iter().zip(tp));
    }
    flagged.sort_by(|a, b| b.0.score.total_cmp(&a.0.score));
    let nv = volumes.len() as f64;
    let mut curve = vec![FrocPoint { threshold: f64::INFINITY, mean_fp: 0.0, sensitivity: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < flagged.len() {
        let s = flagged[i].0.score;
        while i < flagged.len() && flagged[i].0.score == s {
            if flagged[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push(FrocPoint { threshold: s, mean_fp: fp as f64 / nv, sensitivity: tp as f64 / lesions as f64 });
    }
    let sensitivities: Vec<f64> = fp_points
        .iter()
        .map(|&f| curve.iter().filter(|p| p.mean_fp <= f).map(|p| p.sensitivity).fold(0.0, f64::max))
        .collect();
    let average_sensitivity =
        if sensitivities.is_empty() { 0.0 } else { sensitivities.iter().sum::<f64>() / sensitivities.len() as f64 };
    Ok(FrocResult {
        volumes: volumes.len(),
        lesions,
        fp_points: fp_points.to_vec(),
        sensitivities,
        average_sensitivity,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(cx: f64, cy: f64, score: f64) -> Detection {
        Detection { bbox: BBox::from_center(cx, cy, 10.0, 10.0), score, slice_index: 0 }
    }

    #[test]
    fn radius_rule() {
        let gt = BBox::new(100.0, 100.0, 40.0, 30.0);
        assert_eq!(gt.center(), (120.0, 115.0));
        assert_eq!(match_radius(&gt), 25.0);
        assert!(is_hit(&at(140.0, 115.0, 1.0).bbox, &gt));
        assert!(!is_hit(&at(150.0, 115.0, 1.0).bbox, &gt));
        assert_eq!(match_radius(&BBox::new(0.0, 0.0, 10.0, 10.0)), 20.0);
    }

    #[test]
    fn perfect_detector() {
        let mut gt = BTreeMap::new();
        let mut preds = BTreeMap::new();
        for v in 0..5 {
            let b = BBox::new(50.0 * v as f64, 40.0, 30.0, 30.0);
            gt.insert(format!("v{v}"), vec![b]);
            let (cx, cy) = b.center();
            preds.insert(format!("v{v}"), vec![at(cx, cy, 0.9)]);
        }
        let r = froc(&gt, &preds, &FP_POINTS_1_TO_4).unwrap();
        assert_eq!(r.sensitivities, vec![1.0; 4]);
        assert_eq!(r.average_sensitivity, 1.0);
    }

    #[test]
    fn one_lesion_one_claim() {
        let gt = BBox::new(100.0, 100.0, 40.0, 30.0);
        let flags = match_volume(&[at(120.0, 115.0, 0.9), at(121.0, 115.0, 0.8)], &[gt]);
        assert_eq!(flags, vec![true, false]);
    }

    #[test]
    fn monotone_and_errors() {
        let mut gt = BTreeMap::new();
        gt.insert("a".to_string(), vec![BBox::new(100.0, 100.0, 40.0, 30.0)]);
        gt.insert("b".to_string(), vec![]);
        let mut preds = BTreeMap::new();
        preds.insert("a".to_string(), vec![at(400.0, 400.0, 0.9), at(120.0, 115.0, 0.5)]);
        preds.insert("b".to_string(), vec![at(10.0, 10.0, 0.95), at(300.0, 10.0, 0.7)]);
        let r = froc(&gt, &preds, &[0.5, 1.0, 1.5, 2.0]).unwrap();
        assert_eq!(r.sensitivities, vec![0.0, 0.0, 1.0, 1.0]);
        assert!(r.sensitivities.windows(2).all(|w| w[0] <= w[1]));
        assert!(matches!(froc(&BTreeMap::new(), &BTreeMap::new(), &[1.0]), Err(DetectError::NoVolumes)));
        let no_lesions: BTreeMap<String, Vec<BBox>> = [("x".to_string(), vec![])].into();
        assert!(matches!(froc(&no_lesions, &BTreeMap::new(), &[1.0]), Err(DetectError::NoLesions)));
    }
}
