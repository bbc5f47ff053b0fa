//! Warmup + cosine learning-rate schedule.
//!
//! Linear warmup starts at 1/100 of the peak rate and reaches `max_lr` at
//! `warmup_steps`; from there the rate follows a half-cosine down to ~0 at
//! `total_steps`. Both branches evaluate to `max_lr` at the boundary.

use serde::{Deserialize, Serialize};

use crate::error::{MolarError, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LrSchedule {
    pub max_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(max_lr: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        if total_steps == 0 || warmup_steps >= total_steps {
            return Err(MolarError::Config(format!(
                "lr schedule needs warmup_steps < total_steps, got {warmup_steps} / {total_steps}"
            )));
        }
        if max_lr <= 0.0 {
            return Err(MolarError::Config(format!("max_lr must be > 0, got {max_lr}")));
        }
        Ok(Self {
            max_lr,
            warmup_steps,
            total_steps,
        })
    }

    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            let frac = step as f64 / self.warmup_steps as f64;
            self.max_lr * (0.01 + 0.99 * frac)
        } else {
            let progress =
                (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
            let progress = progress.min(1.0);
            self.max_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_one_hundredth_of_peak() {
        let s = LrSchedule::new(1e-4, 100, 1000).unwrap();
        assert!((s.lr(0) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn reaches_peak_at_warmup_end() {
        let s = LrSchedule::new(1e-4, 100, 1000).unwrap();
        assert!((s.lr(100) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn half_peak_at_decay_midpoint() {
        let s = LrSchedule::new(1e-4, 100, 1100).unwrap();
        // midpoint of the decay phase: step 600 of [100, 1100]
        assert!((s.lr(600) - 0.5e-4).abs() < 1e-15);
    }

    #[test]
    fn continuous_at_warmup_boundary() {
        let s = LrSchedule::new(3e-3, 50, 500).unwrap();
        let before = s.lr(49);
        let at = s.lr(50);
        assert!((at - s.max_lr).abs() < 1e-18);
        assert!(at >= before);
    }

    #[test]
    fn positive_before_total_and_near_zero_at_end() {
        let s = LrSchedule::new(1e-4, 10, 200).unwrap();
        for step in 0..200 {
            assert!(s.lr(step) > 0.0, "lr({step}) not positive");
        }
        assert!(s.lr(200) < 1e-12);
    }

    #[test]
    fn zero_warmup_starts_at_peak() {
        let s = LrSchedule::new(1e-2, 0, 10).unwrap();
        assert!((s.lr(0) - 1e-2).abs() < 1e-18);
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(LrSchedule::new(1e-4, 10, 10).is_err());
        assert!(LrSchedule::new(0.0, 1, 10).is_err());
    }
}
