use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Slots per episode.
    pub steps: usize,
    pub batch: usize,
    pub memory: usize,
    pub lr: f64,
    /// Coefficient of the per-episode learning-rate decay.
    pub lr_decay: f64,
    pub eps_start: f64,
    /// Multiplicative exploration decay per environment step.
    pub eps_decay: f64,
    pub eps_min: f64,
    pub gamma: f64,
    pub tau: f64,
    pub hidden: Vec<usize>,
    /// Updates start once a buffer holds `warmup_batches * batch` transitions.
    pub warmup_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 600,
            steps: 200,
            batch: 32,
            memory: 5000,
            lr: 1e-4,
            lr_decay: 0.999,
            eps_start: 1.0,
            eps_decay: 0.999,
            eps_min: 0.01,
            gamma: 0.95,
            tau: 0.01,
            hidden: vec![64, 32],
            warmup_batches: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("train.{field}"), reason))
            }
        };
        check(self.episodes >= 1, "episodes", "must be at least 1")?;
        check(self.steps >= 1, "steps", "must be at least 1")?;
        check(self.batch >= 1, "batch", "must be at least 1")?;
        check(self.batch <= self.memory, "batch", "must not exceed memory")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr", "must be positive")?;
        check(self.lr_decay >= 0.0, "lr_decay", "must be non-negative")?;
        check((0.0..=1.0).contains(&self.eps_start), "eps_start", "must lie in [0, 1]")?;
        check(self.eps_decay > 0.0 && self.eps_decay <= 1.0, "eps_decay", "must lie in (0, 1]")?;
        check(
            (0.0..=self.eps_start).contains(&self.eps_min),
            "eps_min",
            "must lie in [0, eps_start]",
        )?;
        check((0.0..=1.0).contains(&self.gamma), "gamma", "must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.tau), "tau", "must lie in [0, 1]")?;
        check(!self.hidden.contains(&0), "hidden", "layer widths must be positive")?;
        Ok(())
    }

    pub fn warmup(&self) -> usize {
        (self.warmup_batches * self.batch).max(self.batch)
    }
}
