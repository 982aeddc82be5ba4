use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    pub reject: Vec<bool>,
    pub adjusted: Vec<f64>,
}

/// Benjamini-Hochberg step-up adjustment, results in input order.
pub fn benjamini_hochberg(p: &[f64], alpha: f64) -> BhResult {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = f64::INFINITY;
    for (rank, &i) in order.iter().enumerate().rev() {
        let scaled = p[i] * m as f64 / (rank + 1) as f64;
        running = running.min(scaled);
        adjusted[i] = running.min(1.0);
    }
    let reject = adjusted.iter().map(|&a| a <= alpha).collect();
    BhResult { reject, adjusted }
}
