use serde::{Deserialize, Serialize};

use crate::rng::Xoshiro256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    pub lr: f64,
    pub objective: f64,
}

/// Log-uniform random search over the learning rate. Lower objective wins;
/// ties keep the earlier trial.
pub fn log_uniform_search<F>(lo: f64, hi: f64, trials: usize, seed: u64, mut objective: F) -> (f64, Vec<SearchTrial>)
where
    F: FnMut(f64) -> f64,
{
    assert!(lo > 0.0 && hi >= lo && trials > 0);
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut history = Vec::with_capacity(trials);
    for _ in 0..trials {
        let lr = rng.uniform(llo, lhi).exp();
        history.push(SearchTrial { lr, objective: objective(lr) });
    }
    let best = history
        .iter()
        .fold(None::<&SearchTrial>, |acc, t| match acc {
            Some(b) if b.objective <= t.objective || t.objective.is_nan() => Some(b),
            _ => Some(t),
        })
        .map(|t| t.lr)
        .unwrap();
    (best, history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_in_range_and_pick_minimum() {
        let (best, hist) = log_uniform_search(1e-5, 1e-2, 24, 3, |lr| (lr.log10() + 3.0).abs());
        assert_eq!(hist.len(), 24);
        assert!(hist.iter().all(|t| t.lr >= 1e-5 && t.lr < 1e-2));
        let min = hist.iter().map(|t| t.objective).fold(f64::INFINITY, f64::min);
        assert!(hist.iter().any(|t| t.lr == best && t.objective == min));
    }
}
