/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against `target`, with its gradient
/// `softmax(logits) − onehot(target)`.
pub fn softmax_ce(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    assert!(target < logits.len(), "target {target} out of range");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - logits[target];
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - log_z).exp()).collect();
    grad[target] -= 1.0;
    (loss, grad)
}
