use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Linear warmup followed by cosine decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub init: f64,
    pub peak: f64,
    pub warmup_steps: usize,
    pub final_lr: f64,
    pub total_steps: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            init: 2e-6,
            peak: 5e-5,
            warmup_steps: 10_960,
            final_lr: 5e-9,
            total_steps: 1_096_000,
        }
    }
}

impl LrSchedule {
    /// The default shape compressed to `total_steps`, keeping the warmup fraction.
    pub fn scaled(total_steps: usize) -> Self {
        let d = Self::default();
        let warmup = (total_steps as f64 * d.warmup_steps as f64 / d.total_steps as f64).round() as usize;
        Self {
            warmup_steps: warmup.min(total_steps.saturating_sub(1)),
            total_steps,
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.total_steps {
            return Err(config_err(format!(
                "warmup ({}) must be shorter than the schedule ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if ![self.init, self.peak, self.final_lr].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(config_err("learning rates must be finite and non-negative"));
        }
        Ok(())
    }

    /// Learning rate at optimizer step `step`; steps past the end stay at `final_lr`.
    ///
    /// Both phases are written as convex combinations so that the endpoints
    /// come out exactly.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step >= self.total_steps {
            return self.final_lr;
        }
        if step <= self.warmup_steps {
            if self.warmup_steps == 0 {
                return self.peak;
            }
            let t = step as f64 / self.warmup_steps as f64;
            return (1.0 - t) * self.init + t * self.peak;
        }
        let r = (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        let w = 0.5 * (1.0 + (std::f64::consts::PI * r).cos());
        w * self.peak + (1.0 - w) * self.final_lr
    }
}
