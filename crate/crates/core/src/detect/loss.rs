use serde::{Deserialize, Serialize};

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub smoothing: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0, smoothing: 0.0 }
    }
}

/// Sigmoid focal loss of one logit and its derivative.
///
/// The target is smoothed to `t = y(1−s) + s/2` and the loss is
/// `t·FL₁ + (1−t)·FL₀` with `FL₁ = −α(1−p)^γ ln p` and
/// `FL₀ = −(1−α)p^γ ln(1−p)`.
pub fn focal_loss(logit: f64, positive: bool, cfg: &FocalConfig) -> (f64, f64) {
    let y = if positive { 1.0 } else { 0.0 };
    let t = y * (1.0 - cfg.smoothing) + cfg.smoothing / 2.0;
    let p = sigmoid(logit);
    let q = sigmoid(-logit);
    let ln_p = -softplus(-logit);
    let ln_q = -softplus(logit);
    let (a, g) = (cfg.alpha, cfg.gamma);
    let qg = q.powf(g);
    let pg = p.powf(g);
    let fl1 = -a * qg * ln_p;
    let fl0 = -(1.0 - a) * pg * ln_q;
    let d1 = a * qg * (g * p * ln_p - q);
    let d0 = (1.0 - a) * pg * (p - g * q * ln_q);
    (t * fl1 + (1.0 - t) * fl0, t * d1 + (1.0 - t) * d0)
}

/// Smooth-L1 summed over four coordinates, with its gradient.
pub fn smooth_l1(pred: &[f64; 4], target: &[f64; 4], beta: f64) -> (f64, [f64; 4]) {
    let mut loss = 0.0;
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let x = pred[k] - target[k];
        if x.abs() < beta {
            loss += 0.5 * x * x / beta;
            grad[k] = x / beta;
        } else {
            loss += x.abs() - 0.5 * beta;
            grad[k] = x.signum();
        }
    }
    (loss, grad)
}

/// Training target of one sampled anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AnchorTarget {
    Positive([f64; 4]),
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionLoss {
    pub total: f64,
    pub classification: f64,
    pub regression: f64,
    pub grad_logits: Vec<f64>,
    pub grad_deltas: Vec<[f64; 4]>,
}

/// `focal mean over sampled anchors + λ · smooth-L1 mean over positives`.
///
/// `λ` weights the box term. A configured classification-to-box ratio `ρ`
/// enters as `λ = 1/ρ`.
pub fn detection_loss(
    logits: &[f64],
    deltas: &[[f64; 4]],
    targets: &[AnchorTarget],
    focal: &FocalConfig,
    beta: f64,
    lambda: f64,
) -> DetectionLoss {
    let n = targets.len();
    let positives = targets.iter().filter(|t| matches!(t, AnchorTarget::Positive(_))).count();
    let mut cls = 0.0;
    let mut reg = 0.0;
    let mut grad_logits = vec![0.0; n];
    let mut grad_deltas = vec![[0.0; 4]; n];
    for i in 0..n {
        let pos = matches!(targets[i], AnchorTarget::Positive(_));
        let (l, g) = focal_loss(logits[i], pos, focal);
        cls += l / n as f64;
        grad_logits[i] = g / n as f64;
        if let AnchorTarget::Positive(t) = targets[i] {
            let (l, g) = smooth_l1(&deltas[i], &t, beta);
            let w = lambda / positives as f64;
            reg += l / positives as f64;
            grad_deltas[i] = g.map(|v| v * w);
        }
    }
    DetectionLoss { total: cls + lambda * reg, classification: cls, regression: reg, grad_logits, grad_deltas }
}
