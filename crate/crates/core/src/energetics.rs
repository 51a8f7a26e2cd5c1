//! Transferred power, signed work, and the transferred work ratio.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Positive and negative work over an interval, in joules.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorkSplit {
    pub positive_work: f64,
    /// Always `<= 0`.
    pub negative_work: f64,
}

/// η = |W⁻| / (W⁺ + |W⁻|). `degenerate` is set when both works vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkRatio {
    pub eta: f64,
    pub degenerate: bool,
}

impl WorkSplit {
    pub fn new(positive_work: f64, negative_work: f64) -> Result<Self> {
        if !(positive_work >= 0.0 && negative_work <= 0.0) {
            return Err(invalid(format!(
                "work split needs W+ >= 0 and W- <= 0, got {positive_work}, {negative_work}"
            )));
        }
        Ok(Self {
            positive_work,
            negative_work,
        })
    }

    pub fn net(&self) -> f64 {
        self.positive_work + self.negative_work
    }

    pub fn ratio(&self) -> WorkRatio {
        work_ratio(self)
    }

    /// Same split with the roles of positive and negative work exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            positive_work: -self.negative_work,
            negative_work: -self.positive_work,
        }
    }
}

/// Pointwise product of torque and angular velocity.
pub fn power_series(torque: &[f64], velocity: &[f64]) -> Result<Vec<f64>> {
    if torque.len() != velocity.len() {
        return Err(invalid(format!(
            "torque has {} samples but velocity has {}",
            torque.len(),
            velocity.len()
        )));
    }
    if torque.len() < 2 {
        return Err(invalid("power needs at least 2 samples"));
    }
    Ok(torque.iter().zip(velocity).map(|(t, w)| t * w).collect())
}

/// Trapezoidal integrals of the positive-clipped and negative-clipped power.
pub fn work_split(power: &[f64], dt: f64) -> Result<WorkSplit> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!(
            "sample interval must be positive, got {dt}"
        )));
    }
    if power.len() < 2 {
        return Err(invalid("work needs at least 2 power samples"));
    }
    let (mut pos, mut neg) = (0.0, 0.0);
    for pair in power.windows(2) {
        pos += 0.5 * (pair[0].max(0.0) + pair[1].max(0.0));
        neg += 0.5 * (pair[0].min(0.0) + pair[1].min(0.0));
    }
    Ok(WorkSplit {
        positive_work: pos * dt,
        negative_work: neg * dt,
    })
}

pub fn work_ratio(split: &WorkSplit) -> WorkRatio {
    let neg = split.negative_work.abs();
    let denom = split.positive_work + neg;
    if denom > 0.0 {
        WorkRatio {
            eta: neg / denom,
            degenerate: false,
        }
    } else {
        WorkRatio {
            eta: 0.0,
            degenerate: true,
        }
    }
}

/// Plain trapezoidal integral, used to cross-check the split.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    values.windows(2).map(|p| 0.5 * (p[0] + p[1])).sum::<f64>() * dt
}
