use std::cmp::Ordering;

use super::{iou, Detection};

/// Score descending, then x, y, w, h and slice ascending.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
        .then(a.slice_index.cmp(&b.slice_index))
}

/// Greedy suppression of boxes overlapping a kept box by IoU > `iou_thr`.
pub fn nms(dets: &[Detection], iou_thr: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(detection_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_thr) {
            kept.push(d);
        }
    }
    kept
}

/// Pool every slice's detections and suppress in 2D, ignoring the slice.
/// Survivors keep the slice they came from.
pub fn aggregate_volume(per_slice: &[Vec<Detection>], iou_thr: f64) -> Vec<Detection> {
    let pooled: Vec<Detection> = per_slice.iter().flatten().copied().collect();
    nms(&pooled, iou_thr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::BBox;
    use crate::rng::Xoshiro256;

    fn det(x: f64, y: f64, s: f64, slice: u32) -> Detection {
        Detection { bbox: BBox::new(x, y, 20.0, 20.0), score: s, slice_index: slice }
    }

    #[test]
    fn duplicates_and_disjoint() {
        let kept = nms(&[det(10.0, 10.0, 0.8, 0), det(10.0, 10.0, 0.9, 0)], 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
        assert_eq!(nms(&[det(0.0, 0.0, 0.5, 0), det(100.0, 0.0, 0.5, 0)], 0.5).len(), 2);
    }

    #[test]
    fn volume_keeps_originating_slice() {
        let out =
            aggregate_volume(&[vec![], vec![], vec![], vec![det(5.0, 5.0, 0.7, 3)], vec![det(5.0, 5.0, 0.9, 4)]], 0.3);
        assert_eq!(out, vec![det(5.0, 5.0, 0.9, 4)]);
        let single = vec![det(0.0, 0.0, 0.4, 1), det(3.0, 3.0, 0.6, 1)];
        assert_eq!(aggregate_volume(std::slice::from_ref(&single), 0.2), nms(&single, 0.2));
    }

    #[test]
    fn order_independent() {
        let mut rng = Xoshiro256::seed_from_u64(8);
        for _ in 0..200 {
            let mut dets: Vec<Detection> = (0..20)
                .map(|_| det(rng.index(6) as f64 * 5.0, rng.index(6) as f64 * 5.0, rng.index(4) as f64 / 4.0, 0))
                .collect();
            let a = nms(&dets, 0.2);
            rng.shuffle(&mut dets);
            assert_eq!(a, nms(&dets, 0.2));
        }
    }
}
