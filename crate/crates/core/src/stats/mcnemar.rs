use serde::{Deserialize, Serialize};

use super::special::{binomial_half_cdf, chi2_sf_1};
use super::StatsError;

/// Per-sample correctness of two models on the same samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedOutcomes {
    pub ids: Vec<String>,
    pub correct_a: Vec<bool>,
    pub correct_b: Vec<bool>,
}

impl PairedOutcomes {
    pub fn new(ids: Vec<String>, correct_a: Vec<bool>, correct_b: Vec<bool>) -> Result<Self, StatsError> {
        if correct_a.len() != correct_b.len() {
            return Err(StatsError::LengthMismatch(correct_a.len(), correct_b.len()));
        }
        if ids.len() != correct_a.len() {
            return Err(StatsError::LengthMismatch(ids.len(), correct_a.len()));
        }
        Ok(Self { ids, correct_a, correct_b })
    }

    /// Discordant counts `(b, c)`: A right/B wrong, B right/A wrong.
    pub fn discordant(&self) -> (u64, u64) {
        let mut b = 0;
        let mut c = 0;
        for (&a, &bb) in self.correct_a.iter().zip(&self.correct_b) {
            match (a, bb) {
                (true, false) => b += 1,
                (false, true) => c += 1,
                _ => {}
            }
        }
        (b, c)
    }
}

/// Two-sided McNemar p-value from discordant counts.
///
/// Exact binomial below 25 discordant pairs, continuity-corrected χ²
/// otherwise.
pub fn mcnemar_counts(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    if n < 25 {
        return (2.0 * binomial_half_cdf(b.min(c), n)).min(1.0);
    }
    let d = (b as f64 - c as f64).abs() - 1.0;
    chi2_sf_1(d.max(0.0).powi(2) / n as f64)
}

pub fn mcnemar_test(paired: &PairedOutcomes) -> f64 {
    let (b, c) = paired.discordant();
    mcnemar_counts(b, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcomes(b: usize, c: usize, agree: usize) -> PairedOutcomes {
        let mut a = vec![true; b];
        let mut bb = vec![false; b];
        a.extend(vec![false; c]);
        bb.extend(vec![true; c]);
        a.extend(vec![true; agree]);
        bb.extend(vec![true; agree]);
        let ids = (0..a.len()).map(|i| i.to_string()).collect();
        PairedOutcomes::new(ids, a, bb).unwrap()
    }

    #[test]
    fn worked_cases() {
        assert_eq!(mcnemar_test(&outcomes(0, 0, 10)), 1.0);
        assert_eq!(mcnemar_test(&outcomes(5, 1, 3)), 0.21875);
        let p = mcnemar_test(&outcomes(40, 20, 0));
        // Oracle: χ² = 361/60, tail via the Abramowitz-Stegun 7.1.26 erfc.
        let x: f64 = (361.0f64 / 60.0 / 2.0).sqrt();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
        let oracle = poly * (-x * x).exp();
        assert!((p - oracle).abs() < 1e-6, "{p} vs {oracle}");
        assert!((p - 0.0142).abs() < 5e-5);
    }

    #[test]
    fn symmetric_in_b_and_c() {
        for b in 0..40 {
            for c in 0..40 {
                assert_eq!(mcnemar_counts(b, c), mcnemar_counts(c, b));
                let p = mcnemar_counts(b, c);
                assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn rejects_misaligned() {
        assert!(PairedOutcomes::new(vec!["a".into()], vec![true], vec![true, false]).is_err());
    }
}
