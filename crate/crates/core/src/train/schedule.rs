use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl ScheduleConfig {
    pub fn new(lr_max: f64, total_steps: u64) -> Self {
        Self { lr_max, lr_min: 0.0, total_steps: total_steps.max(1) }
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(cfg: &ScheduleConfig, step: u64) -> f64 {
    let t = step.min(cfg.total_steps) as f64 / cfg.total_steps as f64;
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let cfg = ScheduleConfig { lr_max: 1e-3, lr_min: 1e-5, total_steps: 100 };
        assert_eq!(cosine_lr(&cfg, 0), 1e-3);
        assert!((cosine_lr(&cfg, 100) - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(&cfg, 50) - (1e-3 + 1e-5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn non_increasing() {
        let cfg = ScheduleConfig::new(0.01, 37);
        for t in 0..37 {
            assert!(cosine_lr(&cfg, t + 1) <= cosine_lr(&cfg, t));
        }
    }
}
