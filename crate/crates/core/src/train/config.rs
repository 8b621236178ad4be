use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Optimisation and sampling settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr0: f64,
    pub lr_halve_every: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_iters: u64,
    pub seed: u64,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Random flips and 90° rotations of training patches.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl TrainConfig {
    /// Full-scale recipe: batch 16, 48×48 patches, lr 1e-4 halved every 2·10⁵ iterations.
    pub fn full() -> Self {
        Self {
            batch_size: 16,
            patch_size: 48,
            lr0: 1e-4,
            lr_halve_every: 200_000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_iters: 1_000_000,
            seed: 0,
            checkpoint_every: 10_000,
            augment: true,
        }
    }

    /// Laptop-sized run: batch 4, 32×32 patches, 20,000 iterations.
    pub fn desk() -> Self {
        Self {
            batch_size: 4,
            patch_size: 32,
            lr_halve_every: 8_000,
            max_iters: 20_000,
            checkpoint_every: 5_000,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patch_size == 0 {
            return config_err("batch_size and patch_size must be at least 1");
        }
        if self.lr_halve_every == 0 {
            return config_err("lr_halve_every must be at least 1");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return config_err(format!("lr0 must be positive, got {}", self.lr0));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return config_err(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return config_err("adam_eps must be positive");
        }
        Ok(())
    }

    /// Step schedule: `lr0 · 0.5^floor(iter / lr_halve_every)`.
    pub fn lr_at(&self, iter: u64) -> f64 {
        let halvings = (iter / self.lr_halve_every).min(i32::MAX as u64) as i32;
        self.lr0 * 0.5f64.powi(halvings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let cfg = TrainConfig::full();
        assert_eq!(cfg.lr_at(0), 1e-4);
        assert_eq!(cfg.lr_at(199_999), 1e-4);
        assert_eq!(cfg.lr_at(200_000), 5e-5);
        assert_eq!(cfg.lr_at(400_000), 2.5e-5);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::full().validate().is_ok());
        assert!(TrainConfig::desk().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::desk() }.validate().is_err());
        assert!(TrainConfig { adam_beta2: 1.0, ..TrainConfig::desk() }.validate().is_err());
    }
}
