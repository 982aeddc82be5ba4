use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub hyper: AdamWConfig,
}

impl OptimState {
    pub fn new(n_params: usize, hyper: AdamWConfig) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0, hyper }
    }
}

/// One AdamW step with decoupled weight decay:
/// `θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ`.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut OptimState, lr: f64) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.v.len() != state.m.len() {
        return Err(TrainError::ShapeMismatch { params: params.len(), grads: grads.len(), moments: state.m.len() });
    }
    state.t += 1;
    let AdamWConfig { beta1, beta2, eps, weight_decay } = state.hyper;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (v_hat.sqrt() + eps)) + lr * weight_decay * *p;
    }
    Ok(())
}
