use serde::{Deserialize, Serialize};

use super::{adamw_step, cosine_lr, AdamWConfig, LinearHead, OptimState, ScheduleConfig};
use crate::rng::Xoshiro256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adamw: AdamWConfig,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
}

/// Minibatch AdamW with cosine annealing over `n` training samples.
///
/// `batch_grad(head, batch, grad)` must return the summed loss over `batch`
/// and add the summed gradient into `grad` (zeroed by the caller); the
/// loop divides by the batch size. `on_epoch` runs after every epoch.
pub fn fit<G, E>(head: &mut LinearHead, n: usize, cfg: &FitConfig, mut batch_grad: G, mut on_epoch: E) -> OptimState
where
    G: FnMut(&LinearHead, &[usize], &mut [f64]) -> f64,
    E: FnMut(&EpochReport, &LinearHead),
{
    let mut state = OptimState::new(head.params.len(), cfg.adamw);
    if n == 0 {
        return state;
    }
    let batch = cfg.batch_size.max(1);
    let per_epoch = n.div_ceil(batch);
    let schedule = ScheduleConfig::new(cfg.lr, (cfg.epochs * per_epoch) as u64);
    let mut rng = Xoshiro256::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; head.params.len()];
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            total += batch_grad(head, chunk, &mut grad);
            let scale = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let lr = cosine_lr(&schedule, step);
            adamw_step(&mut head.params, &grad, &mut state, lr).expect("shapes fixed by head");
            step += 1;
        }
        on_epoch(&EpochReport { epoch, train_loss: total / n as f64 }, head);
    }
    state
}
