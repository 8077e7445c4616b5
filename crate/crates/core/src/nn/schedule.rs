use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warm-up to `base_lr`, then cosine decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be positive, got {base_lr}")));
        }
        if warmup_steps >= total_steps {
            return Err(Error::Config(format!(
                "warmup_steps ({warmup_steps}) must be below total_steps ({total_steps})"
            )));
        }
        Ok(Self {
            base_lr,
            warmup_steps,
            total_steps,
        })
    }
}

pub fn lr_schedule(t: u64, s: &LrSchedule) -> Result<f64> {
    if t > s.total_steps {
        return Err(Error::Domain(format!(
            "schedule step {t} beyond total {}",
            s.total_steps
        )));
    }
    if t < s.warmup_steps {
        return Ok(s.base_lr * t as f64 / s.warmup_steps as f64);
    }
    let frac = (t - s.warmup_steps) as f64 / (s.total_steps - s.warmup_steps) as f64;
    Ok(s.base_lr * 0.5 * (1.0 + (PI * frac).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn landmarks() {
        let s = LrSchedule::new(1e-3, 100, 1100).unwrap();
        assert_eq!(lr_schedule(0, &s).unwrap(), 0.0);
        assert_eq!(lr_schedule(50, &s).unwrap(), 5e-4);
        assert_eq!(lr_schedule(100, &s).unwrap(), 1e-3);
        assert!((lr_schedule(600, &s).unwrap() - 5e-4).abs() < 1e-18);
        assert!(lr_schedule(1100, &s).unwrap().abs() < 1e-18);
        assert!(lr_schedule(1101, &s).is_err());
    }

    #[test]
    fn no_warmup_starts_at_base() {
        let s = LrSchedule::new(2e-3, 0, 10).unwrap();
        assert_eq!(lr_schedule(0, &s).unwrap(), 2e-3);
    }

    #[test]
    fn invalid_configs() {
        assert!(LrSchedule::new(1e-3, 10, 10).is_err());
        assert!(LrSchedule::new(0.0, 0, 10).is_err());
    }
}
