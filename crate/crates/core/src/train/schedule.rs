//! Scheduled-sampling probability and the three-phase learning-rate schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Inverse-sigmoid decay of the teacher-forcing probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingSchedule {
    pub t_max: usize,
    pub k: f64,
}

impl SamplingSchedule {
    /// `k = 0.3·T_max / ln(0.3·T_max)`; needs `0.3·T_max > 1`.
    pub fn new(t_max: usize) -> Result<Self> {
        let a = 0.3 * t_max as f64;
        if a <= 1.0 {
            return Err(CoreError::config(format!(
                "scheduled sampling needs 0.3·T_max > 1, got T_max = {t_max}"
            )));
        }
        Ok(SamplingSchedule { t_max, k: a / a.ln() })
    }

    /// `p_i = k / (k + exp(i / k))`: probability of feeding the ground truth.
    pub fn prob(&self, step: usize) -> f64 {
        self.k / (self.k + (step as f64 / self.k).exp())
    }
}

pub fn sampling_prob(step: usize, t_max: usize) -> Result<f64> {
    Ok(SamplingSchedule::new(t_max)?.prob(step))
}

/// Linear warm-up, constant plateau, cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub peak: f64,
    pub total: usize,
    pub warmup: f64,
    pub plateau: f64,
}

impl LrSchedule {
    pub fn new(peak: f64, total: usize) -> Self {
        LrSchedule {
            peak,
            total,
            warmup: 0.1,
            plateau: 0.2,
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        let t = self.total as f64;
        let (w, p) = (self.warmup * t, (self.warmup + self.plateau) * t);
        let s = step as f64;
        if s < w {
            self.peak * s / w
        } else if s < p {
            self.peak
        } else if s >= t {
            0.0
        } else {
            self.peak * 0.5 * (1.0 + (PI * (s - p) / (t - p)).cos())
        }
    }
}

pub fn lr_at(step: usize, schedule: &LrSchedule) -> f64 {
    schedule.at(step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_horizon_rejected() {
        assert!(SamplingSchedule::new(3).is_err());
        assert!(SamplingSchedule::new(4).is_ok());
    }

    #[test]
    fn schedule_is_continuous() {
        let s = LrSchedule::new(1e-3, 1000);
        for b in [100usize, 300] {
            assert!((s.at(b) - s.at(b - 1)).abs() < 2e-5);
        }
        assert_eq!(s.at(0), 0.0);
        assert_eq!(s.at(1000), 0.0);
    }
}
