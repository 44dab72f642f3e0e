use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup to `peak_lr`, then linear decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn new(peak_lr: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        let s = Self {
            peak_lr,
            warmup_steps,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(Error::Config(format!(
                "peak learning rate must be positive, got {}",
                self.peak_lr
            )));
        }
        if self.warmup_steps == 0 || self.warmup_steps > self.total_steps {
            return Err(Error::Config(format!(
                "need 0 < warmup_steps <= total_steps, got {} and {}",
                self.warmup_steps, self.total_steps
            )));
        }
        Ok(())
    }

    /// Learning rate for 1-based `step`. Past the horizon it stays at zero.
    pub fn lr_at_step(&self, step: u64) -> f64 {
        if step > self.total_steps {
            log::warn!(
                "step {step} is past the schedule horizon {}; learning rate clamped to 0",
                self.total_steps
            );
            return 0.0;
        }
        if step <= self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        let remaining = (self.total_steps - step) as f64;
        let span = (self.total_steps - self.warmup_steps).max(1) as f64;
        self.peak_lr * remaining / span
    }
}
