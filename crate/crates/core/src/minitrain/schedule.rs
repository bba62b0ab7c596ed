//! Learning-rate schedules for distributed training.
//!
//! Scaling the effective batch size by distributing work calls for a
//! proportionally scaled learning rate, reached through a linear warmup ramp
//! to avoid early-training instability.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Constant,
    LinearScaled,
    WarmupThenScaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub scale_factor: f64,
    pub warmup_steps: u64,
    pub mode: ScheduleMode,
}

impl LrSchedule {
    pub fn constant(base_lr: f64) -> Self {
        LrSchedule {
            base_lr,
            scale_factor: 1.0,
            warmup_steps: 0,
            mode: ScheduleMode::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::invalid("lr schedule", "base_lr must be positive"));
        }
        if !(self.scale_factor > 0.0) {
            return Err(Error::invalid("lr schedule", "scale_factor must be positive"));
        }
        Ok(())
    }
}

/// Learning rate at `step`.
///
/// Constant mode holds `base_lr`; linear-scaled holds `base_lr * scale`;
/// warmup ramps linearly from `base_lr` at step 0 to the scaled rate at
/// `warmup_steps` and stays flat after.
pub fn lr_at(schedule: &LrSchedule, step: u64) -> f64 {
    let scaled = schedule.base_lr * schedule.scale_factor;
    match schedule.mode {
        ScheduleMode::Constant => schedule.base_lr,
        ScheduleMode::LinearScaled => scaled,
        ScheduleMode::WarmupThenScaled => {
            if step >= schedule.warmup_steps || schedule.warmup_steps == 0 {
                scaled
            } else {
                let f = step as f64 / schedule.warmup_steps as f64;
                schedule.base_lr + f * (scaled - schedule.base_lr)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn warmup(base: f64, scale: f64, steps: u64) -> LrSchedule {
        LrSchedule {
            base_lr: base,
            scale_factor: scale,
            warmup_steps: steps,
            mode: ScheduleMode::WarmupThenScaled,
        }
    }

    #[test]
    fn ramp_endpoints() {
        let s = warmup(0.1, 4.0, 100);
        assert_relative_eq!(lr_at(&s, 0), 0.1);
        assert_relative_eq!(lr_at(&s, 100), 0.4);
        assert_relative_eq!(lr_at(&s, 10_000), 0.4);
    }

    #[test]
    fn ramp_midpoint_is_linear() {
        let s = warmup(0.1, 4.0, 100);
        // 0.1 + 0.5 * (0.4 - 0.1)
        assert_relative_eq!(lr_at(&s, 50), 0.25);
    }

    #[test]
    fn ramp_is_monotone_then_flat() {
        let s = warmup(0.05, 8.0, 37);
        let rates: Vec<f64> = (0..=80).map(|t| lr_at(&s, t)).collect();
        assert!(rates.windows(2).all(|w| w[0] <= w[1]));
        assert!(rates[37..].iter().all(|&r| r == rates[37]));
        assert!(rates.iter().all(|&r| r > 0.0));
    }

    #[test]
    fn constant_and_scaled_modes() {
        let c = LrSchedule::constant(0.3);
        assert_eq!(lr_at(&c, 0), 0.3);
        assert_eq!(lr_at(&c, 999), 0.3);
        let s = LrSchedule {
            mode: ScheduleMode::LinearScaled,
            ..warmup(0.3, 2.0, 10)
        };
        assert_eq!(lr_at(&s, 0), 0.6);
    }

    #[test]
    fn zero_warmup_jumps_to_scaled() {
        let s = warmup(0.1, 4.0, 0);
        assert_relative_eq!(lr_at(&s, 0), 0.4);
    }
}
