//! Simulated human–exoskeleton gait plant.
//!
//! Hip angular velocity over the re-referenced gait cycle is a time-warped
//! sine: extension (positive) until `phase_reversal`, flexion afterwards.
//! The commanded assistance passes through a first-order lag standing in for
//! the admittance loop, and a small zero-mean residual interaction torque is
//! superimposed. Per-cycle works carry multiplicative Gaussian noise.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::energetics::{self, WorkRatio, WorkSplit};
use crate::error::{Error, Result};
use crate::profile::{self, ProfileParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    /// Seconds per gait cycle.
    pub cycle_duration: f64,
    /// Peak hip angular velocity, rad/s.
    pub omega_amplitude: f64,
    /// Cycle fraction at which extension turns into flexion.
    pub phase_reversal: f64,
    /// Seconds; zero disables the lag.
    pub lag_time_constant: f64,
    /// N·m amplitude of the residual interaction torque.
    pub residual_torque_amp: f64,
    /// Cycle fraction by which the residual torque trails the cycle start.
    /// Sets the zero-torque work ratio; see [`calibrate_residual_phase`].
    pub residual_phase: f64,
    /// Relative standard deviation of the per-cycle work noise.
    pub work_noise_std: f64,
    pub samples_per_cycle: usize,
    /// Mixed with the trial seed to key the measurement-noise stream.
    pub seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            cycle_duration: 1.1,
            omega_amplitude: 2.0,
            phase_reversal: 0.35,
            lag_time_constant: 0.05,
            residual_torque_amp: 0.4,
            residual_phase: DEFAULT_RESIDUAL_PHASE,
            work_noise_std: DEFAULT_WORK_NOISE_STD,
            samples_per_cycle: 1000,
            seed: 0,
        }
    }
}

/// Output of [`calibrate_residual_phase`] for the default kinematics, frozen.
pub const DEFAULT_RESIDUAL_PHASE: f64 = 0.138_125_534_6;
/// Output of [`calibrate_work_noise`] for the default plant at the
/// [`NOISE_CALIBRATION_PEAK`] operating point, frozen.
pub const DEFAULT_WORK_NOISE_STD: f64 = 0.070_71;

/// Zero-torque work ratio the residual phase is calibrated to.
pub const ZERO_TORQUE_RATIO: f64 = 0.3396;
/// Windowed-ratio standard deviation the noise level is calibrated to.
pub const NOISE_CALIBRATION_STD: f64 = 0.006;
/// Peak timing of the calibration operating point; the offset is placed on
/// the target-ratio level set.
pub const NOISE_CALIBRATION_PEAK: f64 = 25.0;

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.cycle_duration > 0.0 && self.cycle_duration.is_finite()) {
            return bad(format!(
                "cycle_duration must be > 0, got {}",
                self.cycle_duration
            ));
        }
        if !(self.phase_reversal > 0.0 && self.phase_reversal < 1.0) {
            return bad(format!(
                "phase_reversal must be in (0,1), got {}",
                self.phase_reversal
            ));
        }
        if !(self.lag_time_constant >= 0.0) {
            return bad(format!(
                "lag_time_constant must be >= 0, got {}",
                self.lag_time_constant
            ));
        }
        if !(self.work_noise_std >= 0.0) {
            return bad(format!(
                "work_noise_std must be >= 0, got {}",
                self.work_noise_std
            ));
        }
        if self.samples_per_cycle < 100 {
            return bad(format!(
                "samples_per_cycle must be >= 100, got {}",
                self.samples_per_cycle
            ));
        }
        if !self.omega_amplitude.is_finite()
            || !self.residual_torque_amp.is_finite()
            || !self.residual_phase.is_finite()
        {
            return bad("non-finite plant parameter".into());
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.cycle_duration / self.samples_per_cycle as f64
    }
}

/// Extension velocity (rad/s) at cycle fraction `phase`.
pub fn extension_velocity(config: &PlantConfig, phase: f64) -> f64 {
    let rev = config.phase_reversal;
    let warped = if phase <= rev {
        phase / (2.0 * rev)
    } else {
        0.5 + (phase - rev) / (2.0 * (1.0 - rev))
    };
    config.omega_amplitude * (TAU * warped).sin()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleMeasurement {
    pub torque_trace: Vec<f64>,
    pub velocity_trace: Vec<f64>,
    /// Sample interval of the traces, s.
    pub dt: f64,
    pub positive_work: f64,
    pub negative_work: f64,
    pub work_ratio: f64,
    pub degenerate: bool,
}

impl CycleMeasurement {
    pub fn split(&self) -> WorkSplit {
        WorkSplit {
            positive_work: self.positive_work,
            negative_work: self.negative_work,
        }
    }

    /// Noise-free works integrated from the retained traces.
    pub fn trace_split(&self) -> WorkSplit {
        let power = energetics::power_series(&self.torque_trace, &self.velocity_trace)
            .expect("plant traces have equal length");
        energetics::work_split(&power, self.dt).expect("plant dt is positive")
    }
}

/// The plant with its velocity and residual-torque waveforms precomputed.
///
/// Traces hold `samples_per_cycle + 1` points so the trapezoid spans the
/// whole cycle.
#[derive(Debug, Clone)]
pub struct GaitPlant {
    config: PlantConfig,
    velocity: Vec<f64>,
    residual: Vec<f64>,
    noise: Option<Normal<f64>>,
}

impl GaitPlant {
    pub fn new(config: PlantConfig) -> Result<Self> {
        config.validate()?;
        let n = config.samples_per_cycle;
        let phases = (0..=n).map(|i| i as f64 / n as f64);
        let velocity = phases
            .clone()
            .map(|p| extension_velocity(&config, p))
            .collect();
        let residual = phases
            .map(|p| config.residual_torque_amp * (TAU * (p - config.residual_phase)).sin())
            .collect();
        let noise = (config.work_noise_std > 0.0)
            .then(|| Normal::new(0.0, config.work_noise_std).expect("validated std"));
        Ok(Self {
            config,
            velocity,
            residual,
            noise,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    /// Measured torque trace: lagged command plus residual.
    pub fn torque_trace(&self, params: &ProfileParams) -> Vec<f64> {
        let n = self.config.samples_per_cycle;
        let dt = self.config.dt();
        let tau = self.config.lag_time_constant;
        let gain = if tau > 0.0 { dt / (tau + dt) } else { 1.0 };
        let mut state = 0.0;
        (0..=n)
            .map(|i| {
                let command = profile::torque_at(params, 100.0 * i as f64 / n as f64);
                state += gain * (command - state);
                state + self.residual[i]
            })
            .collect()
    }

    /// One cycle with noise disabled.
    pub fn noiseless_cycle(&self, params: &ProfileParams) -> CycleMeasurement {
        let torque_trace = self.torque_trace(params);
        let dt = self.config.dt();
        let power = energetics::power_series(&torque_trace, &self.velocity)
            .expect("traces share the cycle grid");
        let split = energetics::work_split(&power, dt).expect("dt > 0");
        let WorkRatio { eta, degenerate } = split.ratio();
        CycleMeasurement {
            torque_trace,
            velocity_trace: self.velocity.clone(),
            dt,
            positive_work: split.positive_work,
            negative_work: split.negative_work,
            work_ratio: eta,
            degenerate,
        }
    }

    pub fn simulate_cycle<R: Rng + ?Sized>(
        &self,
        params: &ProfileParams,
        rng: &mut R,
    ) -> CycleMeasurement {
        self.simulate_window(params, 1, rng)
            .expect("a single-cycle window is always valid")
    }

    /// Mean works over `n_cycles` noisy cycles; traces are those of the last.
    pub fn simulate_window<R: Rng + ?Sized>(
        &self,
        params: &ProfileParams,
        n_cycles: usize,
        rng: &mut R,
    ) -> Result<CycleMeasurement> {
        if n_cycles == 0 {
            return Err(Error::InvalidArgument(
                "window needs at least one cycle".into(),
            ));
        }
        // the plant is memoryless, so every cycle shares the noiseless traces
        let mut m = self.noiseless_cycle(params);
        let Some(noise) = self.noise else {
            return Ok(m);
        };
        let clean = m.split();
        let (mut pos, mut neg) = (0.0, 0.0);
        for _ in 0..n_cycles {
            let ep = noise.sample(rng);
            let en = noise.sample(rng);
            pos += clean.positive_work * (1.0 + ep).max(0.0);
            neg += clean.negative_work.abs() * (1.0 + en).max(0.0);
        }
        let split = WorkSplit {
            positive_work: pos / n_cycles as f64,
            negative_work: -neg / n_cycles as f64,
        };
        let WorkRatio { eta, degenerate } = split.ratio();
        m.positive_work = split.positive_work;
        m.negative_work = split.negative_work;
        m.work_ratio = eta.clamp(0.0, 1.0);
        m.degenerate = degenerate;
        Ok(m)
    }

    /// Noise-free work ratio in zero-torque mode.
    pub fn zero_torque_ratio(&self) -> f64 {
        let params = ProfileParams::new(0.0, 25.0, 45.0).expect("static params");
        self.noiseless_cycle(&params).work_ratio
    }
}

/// Bisects `residual_phase` on `[0, phase_reversal]` so that the zero-torque
/// work ratio hits `target`. Returns the calibrated phase.
pub fn calibrate_residual_phase(config: &PlantConfig, target: f64) -> Result<f64> {
    let ratio_at = |phase: f64| -> Result<f64> {
        let cfg = PlantConfig {
            residual_phase: phase,
            work_noise_std: 0.0,
            ..config.clone()
        };
        Ok(GaitPlant::new(cfg)?.zero_torque_ratio())
    };
    let (mut lo, mut hi) = (0.0, config.phase_reversal);
    let (f_lo, f_hi) = (ratio_at(lo)? - target, ratio_at(hi)? - target);
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Config(format!(
            "zero-torque ratio target {target} not bracketed by residual phase in [0, {hi}]"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if (ratio_at(mid)? - target).signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Offset timing at which the noiseless ratio equals `eta` for the given
/// peak timing, by bisection over the admissible offsets up to `max_offset`.
pub fn level_set_offset(
    plant: &GaitPlant,
    peak_torque: f64,
    t_peak: f64,
    eta: f64,
    max_offset: f64,
) -> Result<f64> {
    let ratio = |t_offset: f64| -> Result<f64> {
        Ok(plant
            .noiseless_cycle(&ProfileParams::new(peak_torque, t_peak, t_offset)?)
            .work_ratio)
    };
    let (mut lo, mut hi) = (t_peak + profile::MIN_SEPARATION, max_offset);
    if !(ratio(lo)? <= eta && ratio(hi)? >= eta) {
        return Err(Error::Config(format!(
            "ratio {eta} not reached along t_peak = {t_peak}"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid)? < eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sample standard deviation of the windowed work ratio at `params`.
pub fn window_ratio_std<R: Rng + ?Sized>(
    plant: &GaitPlant,
    params: &ProfileParams,
    n_cycles: usize,
    repetitions: usize,
    rng: &mut R,
) -> Result<f64> {
    if repetitions < 2 {
        return Err(Error::InvalidArgument("need at least 2 repetitions".into()));
    }
    let etas = (0..repetitions)
        .map(|_| {
            plant
                .simulate_window(params, n_cycles, rng)
                .map(|m| m.work_ratio)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(crate::stats::std_dev(&etas))
}

/// Bisects `work_noise_std` so the `n_cycles`-window ratio at `params` has
/// standard deviation `target_std`. Every probe reuses the same seed, which
/// makes the estimate monotone in the noise level.
pub fn calibrate_work_noise(
    config: &PlantConfig,
    params: &ProfileParams,
    n_cycles: usize,
    target_std: f64,
    repetitions: usize,
    seed: u64,
) -> Result<f64> {
    use rand::SeedableRng;
    let std_at = |s: f64| -> Result<f64> {
        let plant = GaitPlant::new(PlantConfig {
            work_noise_std: s,
            ..config.clone()
        })?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        window_ratio_std(&plant, params, n_cycles, repetitions, &mut rng)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    if std_at(hi)? < target_std {
        return Err(Error::Config(format!(
            "target ratio std {target_std} unreachable with relative noise <= 1"
        )));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if std_at(mid)? < target_std {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
