use serde::{Deserialize, Serialize};

use super::auroc::midranks;
use super::special::normal_two_sided;
use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    /// Variance of `auc_a − auc_b`.
    pub variance: f64,
    pub z: f64,
    pub p: f64,
}

/// Structural components of one model's AUC: `V10` per positive (fraction
/// of negatives it outranks) and `V01` per negative (fraction of positives
/// outranking it), ties ½. Computed from midranks in O(n log n).
pub fn structural_components(scores: &[f64], labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let tz = midranks(&all);
    let tx = midranks(&pos);
    let ty = midranks(&neg);
    let v10 = (0..pos.len()).map(|i| (tz[i] - tx[i]) / n).collect();
    let v01 = (0..neg.len()).map(|j| 1.0 - (tz[pos.len() + j] - ty[j]) / m).collect();
    (v10, v01)
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len() as f64;
    if a.len() < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / k;
    let mb = b.iter().sum::<f64>() / k;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (k - 1.0)
}

/// DeLong's test for two correlated AUCs on the same samples.
pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[bool]) -> Result<DelongResult, StatsError> {
    if scores_a.len() != labels.len() {
        return Err(StatsError::LengthMismatch(scores_a.len(), labels.len()));
    }
    if scores_b.len() != labels.len() {
        return Err(StatsError::LengthMismatch(scores_b.len(), labels.len()));
    }
    let m = labels.iter().filter(|&&l| l).count();
    if m == 0 || m == labels.len() {
        return Err(StatsError::SingleClass);
    }
    let n = labels.len() - m;
    let (a10, a01) = structural_components(scores_a, labels);
    let (b10, b01) = structural_components(scores_b, labels);
    let auc_a = a10.iter().sum::<f64>() / m as f64;
    let auc_b = b10.iter().sum::<f64>() / m as f64;
    let s10 = covariance(&a10, &a10) + covariance(&b10, &b10) - 2.0 * covariance(&a10, &b10);
    let s01 = covariance(&a01, &a01) + covariance(&b01, &b01) - 2.0 * covariance(&a01, &b01);
    let variance = (s10 / m as f64 + s01 / n as f64).max(0.0);
    let diff = auc_a - auc_b;
    let (z, p) = if variance > 0.0 {
        let z = diff / variance.sqrt();
        (z, normal_two_sided(z))
    } else if diff == 0.0 {
        (0.0, 1.0)
    } else {
        (diff.signum() * f64::INFINITY, 0.0)
    };
    Ok(DelongResult { auc_a, auc_b, variance, z, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256;

    fn psi(x: f64, y: f64) -> f64 {
        if x > y {
            1.0
        } else if x == y {
            0.5
        } else {
            0.0
        }
    }

    #[test]
    fn identical_models() {
        let s = [0.1, 0.4, 0.35, 0.8, 0.7, 0.2];
        let l = [false, false, true, true, true, false];
        let r = delong_test(&s, &s, &l).unwrap();
        assert_eq!((r.z, r.p), (0.0, 1.0));
    }

    #[test]
    fn eight_sample_components_match_pairwise() {
        let a = [0.9, 0.8, 0.3, 0.6, 0.55, 0.4, 0.2, 0.6];
        let b = [0.7, 0.9, 0.5, 0.2, 0.6, 0.3, 0.1, 0.4];
        let l = [true, true, true, true, false, false, false, false];
        let (pos, neg): (Vec<usize>, Vec<usize>) = (0..8).partition(|&i| l[i]);
        let brute = |s: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let v10 = pos.iter().map(|&i| neg.iter().map(|&j| psi(s[i], s[j])).sum::<f64>() / 4.0).collect();
            let v01 = neg.iter().map(|&j| pos.iter().map(|&i| psi(s[i], s[j])).sum::<f64>() / 4.0).collect();
            (v10, v01)
        };
        for s in [&a, &b] {
            let (v10, v01) = structural_components(s, &l);
            let (w10, w01) = brute(s);
            for (x, y) in v10.iter().chain(&v01).zip(w10.iter().chain(&w01)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let (a10, a01) = brute(&a);
        let (b10, b01) = brute(&b);
        let var = |u: &[f64], v: &[f64]| {
            let mu = u.iter().sum::<f64>() / u.len() as f64;
            let mv = v.iter().sum::<f64>() / v.len() as f64;
            u.iter().zip(v).map(|(x, y)| (x - mu) * (y - mv)).sum::<f64>() / (u.len() as f64 - 1.0)
        };
        let expected = (var(&a10, &a10) + var(&b10, &b10) - 2.0 * var(&a10, &b10)) / 4.0
            + (var(&a01, &a01) + var(&b01, &b01) - 2.0 * var(&a01, &b01)) / 4.0;
        let r = delong_test(&a, &b, &l).unwrap();
        assert!((r.variance - expected).abs() < 1e-14);
        assert!(r.variance >= 0.0 && (0.0..=1.0).contains(&r.p));
    }

    #[test]
    fn swapping_negates_z() {
        let mut rng = Xoshiro256::seed_from_u64(5);
        let l: Vec<bool> = (0..60).map(|i| i % 2 == 0).collect();
        let a: Vec<f64> = l.iter().map(|&y| y as u8 as f64 + rng.normal()).collect();
        let b: Vec<f64> = l.iter().map(|&y| 0.3 * y as u8 as f64 + rng.normal()).collect();
        let ab = delong_test(&a, &b, &l).unwrap();
        let ba = delong_test(&b, &a, &l).unwrap();
        assert_eq!(ab.z, -ba.z);
        assert_eq!(ab.p, ba.p);
    }

    #[test]
    fn errors() {
        assert_eq!(delong_test(&[0.1], &[0.2], &[true]), Err(StatsError::SingleClass));
        assert_eq!(delong_test(&[0.1, 0.2], &[0.2], &[true, false]), Err(StatsError::LengthMismatch(1, 2)));
    }
}
