//! Assistive torque profile built from two minimum-jerk halves.
//!
//! Phase is expressed in percent of a gait cycle that starts at maximum hip
//! flexion. Torque rises from zero at `t_onset` to `peak_torque` at `t_peak`
//! and falls back to zero at `t_offset`; both halves are the quintic
//! minimum-jerk blend, so the curve has zero slope at all three knots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum separation between peak and offset timing, in percentage points.
pub const MIN_SEPARATION: f64 = 5.0;

/// Peak torque and timing knots of the assistance curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    /// N·m. Zero selects zero-torque (transparent) mode.
    pub peak_torque: f64,
    pub t_peak: f64,
    pub t_offset: f64,
    pub t_onset: f64,
}

impl ProfileParams {
    /// Profile with onset at the start of the cycle.
    pub fn new(peak_torque: f64, t_peak: f64, t_offset: f64) -> Result<Self> {
        Self::with_onset(peak_torque, 0.0, t_peak, t_offset)
    }

    pub fn with_onset(peak_torque: f64, t_onset: f64, t_peak: f64, t_offset: f64) -> Result<Self> {
        let p = Self {
            peak_torque,
            t_peak,
            t_offset,
            t_onset,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.peak_torque, self.t_peak, self.t_offset, self.t_onset]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidProfile("non-finite field".into()));
        }
        if self.peak_torque < 0.0 {
            return Err(Error::InvalidProfile(format!(
                "peak torque {} is negative",
                self.peak_torque
            )));
        }
        if !(0.0 <= self.t_onset && self.t_onset < self.t_peak) {
            return Err(Error::InvalidProfile(format!(
                "need 0 <= t_onset < t_peak, got onset {} peak {}",
                self.t_onset, self.t_peak
            )));
        }
        // small slack so that values produced by clamping arithmetic pass
        if self.t_peak + MIN_SEPARATION > self.t_offset + 1e-9 || self.t_offset > 100.0 {
            return Err(Error::InvalidProfile(format!(
                "need t_peak + {MIN_SEPARATION} <= t_offset <= 100, got peak {} offset {}",
                self.t_peak, self.t_offset
            )));
        }
        Ok(())
    }

    pub fn with_peak_torque(mut self, peak_torque: f64) -> Self {
        self.peak_torque = peak_torque;
        self
    }

    /// Torque in N·m at `phase` percent.
    pub fn torque_at(&self, phase: f64) -> f64 {
        torque_at(self, phase)
    }
}

/// Quintic minimum-jerk blend `10s³ − 15s⁴ + 6s⁵` on `[0, 1]`.
pub fn min_jerk(s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain {
            value: s,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(min_jerk_unchecked(s))
}

#[inline]
fn min_jerk_unchecked(s: f64) -> f64 {
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

pub fn torque_at(params: &ProfileParams, phase: f64) -> f64 {
    let ProfileParams {
        peak_torque,
        t_peak,
        t_offset,
        t_onset,
    } = *params;
    if phase <= t_onset || phase >= t_offset {
        0.0
    } else if phase <= t_peak {
        peak_torque * min_jerk_unchecked((phase - t_onset) / (t_peak - t_onset))
    } else {
        peak_torque * min_jerk_unchecked((t_offset - phase) / (t_offset - t_peak))
    }
}

/// `n` torques at phases `100·i/n`, `i = 0..n`.
pub fn sample_profile(params: &ProfileParams, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "profile needs at least 2 samples, got {n}"
        )));
    }
    Ok((0..n)
        .map(|i| torque_at(params, 100.0 * i as f64 / n as f64))
        .collect())
}
