//! One plant-in-the-loop tuning trial: torque ramp, windowed measurement,
//! clamped timing updates, batch policy updates and the stopping rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lspi::{self, ActionBounds, CostWeights, RlAction, Sample, WeightVector};
use crate::plant::{CycleMeasurement, GaitPlant, PlantConfig};
use crate::profile::{ProfileParams, MIN_SEPARATION};

/// Admissible rectangle for `(t_peak, t_offset)` plus the minimum gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingBounds {
    pub peak_min: f64,
    pub peak_max: f64,
    pub offset_min: f64,
    pub offset_max: f64,
    pub min_separation: f64,
}

impl Default for TimingBounds {
    fn default() -> Self {
        Self {
            peak_min: 15.0,
            peak_max: 40.0,
            offset_min: 30.0,
            offset_max: 55.0,
            min_separation: MIN_SEPARATION,
        }
    }
}

impl TimingBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.peak_min < self.peak_max
            && self.offset_min < self.offset_max
            && self.min_separation >= MIN_SEPARATION
            && self.peak_min > 0.0
            && self.offset_max <= 100.0
            && self.peak_min + self.min_separation <= self.offset_max;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "inconsistent timing bounds {self:?}"
            )))
        }
    }

    pub fn contains(&self, t_peak: f64, t_offset: f64) -> bool {
        (self.peak_min..=self.peak_max).contains(&t_peak)
            && (self.offset_min..=self.offset_max).contains(&t_offset)
            && t_offset >= t_peak + self.min_separation - 1e-9
    }
}

/// Protocol constants of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Protocol {
    pub eta_target: f64,
    pub alpha: f64,
    pub window_cycles: usize,
    pub samples_per_policy_update: usize,
    pub stop_bound: f64,
    pub stop_consecutive: usize,
    /// Gait cycles, ramp included.
    pub cycle_budget: usize,
    pub ramp_steps: usize,
    /// N·m.
    pub peak_torque: f64,
    pub initial_t_peak: Option<f64>,
    pub initial_t_offset: Option<f64>,
    pub timing_bounds: TimingBounds,
    pub seed: u64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            eta_target: 0.16,
            alpha: 7.0,
            window_cycles: 5,
            samples_per_policy_update: 15,
            stop_bound: 0.01,
            stop_consecutive: 10,
            cycle_budget: 820,
            ramp_steps: 15,
            peak_torque: 24.0,
            initial_t_peak: None,
            initial_t_offset: None,
            timing_bounds: TimingBounds::default(),
            seed: 1,
        }
    }
}

/// Learner settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LspiConfig {
    pub gamma: f64,
    pub ridge: f64,
    pub max_step: f64,
    pub r_x: f64,
    pub r_u: [[f64; 2]; 2],
    pub exploration_sigma: f64,
    /// Multiplies the exploration sigma after each policy update.
    pub exploration_decay: f64,
    /// Eigenvalue floor of the action block of a random initial policy.
    pub initial_min_eig: f64,
    /// Eigenvalue floor enforced on the action block after each solve;
    /// unset means the smallest eigenvalue of `r_u`.
    pub policy_min_eig: Option<f64>,
    /// Fixed initial policy instead of a random draw.
    pub initial_weights: Option<WeightVector>,
}

impl Default for LspiConfig {
    fn default() -> Self {
        let cw = CostWeights::default();
        Self {
            gamma: 0.3,
            ridge: 1e-6,
            max_step: 2.0,
            r_x: cw.r_x,
            r_u: cw.r_u,
            exploration_sigma: 1.0,
            exploration_decay: 0.5,
            initial_min_eig: 0.1,
            policy_min_eig: None,
            initial_weights: None,
        }
    }
}

impl LspiConfig {
    pub fn cost_weights(&self) -> CostWeights {
        CostWeights {
            r_x: self.r_x,
            r_u: self.r_u,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.cost_weights().validate()?;
        ActionBounds::new(self.max_step).map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0,1), got {}", self.gamma));
        }
        if !(self.ridge >= 0.0) {
            return bad(format!("ridge must be >= 0, got {}", self.ridge));
        }
        if !(self.exploration_sigma >= 0.0 && self.exploration_sigma.is_finite()) {
            return bad(format!(
                "exploration_sigma must be >= 0, got {}",
                self.exploration_sigma
            ));
        }
        if !(0.0..=1.0).contains(&self.exploration_decay) {
            return bad(format!(
                "exploration_decay must be in [0,1], got {}",
                self.exploration_decay
            ));
        }
        if self.policy_min_eig.is_some_and(|v| !(v >= 0.0)) || !(self.initial_min_eig >= 0.0) {
            return bad("eigenvalue floors must be >= 0".into());
        }
        if self.initial_weights.is_some_and(|w| !w.is_finite()) {
            return bad("initial_weights must be finite".into());
        }
        Ok(())
    }
}

/// Everything a trial needs. Serialises with sections `trial`, `plant`, `lspi`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialConfig {
    #[serde(rename = "trial")]
    pub protocol: Protocol,
    pub plant: PlantConfig,
    pub lspi: LspiConfig,
}

impl TrialConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.protocol.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.protocol;
        let bad = |msg: String| Err(Error::Config(msg));
        self.plant.validate()?;
        self.lspi.validate()?;
        p.timing_bounds.validate()?;
        if p.window_cycles == 0
            || p.samples_per_policy_update == 0
            || p.stop_consecutive == 0
            || p.ramp_steps == 0
        {
            return bad("protocol counts must be >= 1".into());
        }
        if p.samples_per_policy_update < lspi::MIN_SAMPLES {
            return bad(format!(
                "samples_per_policy_update must be >= {}, got {}",
                lspi::MIN_SAMPLES,
                p.samples_per_policy_update
            ));
        }
        if !(p.stop_bound > 0.0) {
            return bad(format!("stop_bound must be > 0, got {}", p.stop_bound));
        }
        if !(p.eta_target > 0.0 && p.eta_target < 1.0) {
            return bad(format!("eta_target must be in (0,1), got {}", p.eta_target));
        }
        if !(p.alpha > 0.0 && p.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", p.alpha));
        }
        if !(p.peak_torque >= 0.0 && p.peak_torque.is_finite()) {
            return bad(format!("peak_torque must be >= 0, got {}", p.peak_torque));
        }
        let b = &p.timing_bounds;
        if let Some(tp) = p.initial_t_peak {
            if !(b.peak_min..=b.peak_max).contains(&tp) {
                return bad(format!(
                    "initial_t_peak {tp} outside [{}, {}]",
                    b.peak_min, b.peak_max
                ));
            }
        }
        if let Some(to) = p.initial_t_offset {
            if !(b.offset_min..=b.offset_max).contains(&to) {
                return bad(format!(
                    "initial_t_offset {to} outside [{}, {}]",
                    b.offset_min, b.offset_max
                ));
            }
            if let Some(tp) = p.initial_t_peak {
                if to < tp + b.min_separation {
                    return bad(format!(
                        "initial timings ({tp}, {to}) closer than {}",
                        b.min_separation
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    BudgetExceeded,
}

/// One action update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub k: usize,
    pub t_peak: f64,
    pub t_offset: f64,
    pub eta: f64,
    pub x: f64,
    pub d_peak: f64,
    pub d_offset: f64,
    pub cost: f64,
    pub policy_version: usize,
}

/// A policy solve that failed; the previous policy was kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverEvent {
    pub update: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub seed: u64,
    pub records: Vec<UpdateRecord>,
    pub outcome: Outcome,
    pub updates_to_converge: Option<usize>,
    /// Mean measured ratio over the last `stop_consecutive` updates.
    pub final_eta: Option<f64>,
    pub final_t_peak: f64,
    pub final_t_offset: f64,
    pub policy_update_indices: Vec<usize>,
    pub cycles_used: usize,
    pub solver_events: Vec<SolverEvent>,
    pub final_weights: WeightVector,
    /// Measurement of the last window, traces included.
    #[serde(skip)]
    pub last_window: Option<CycleMeasurement>,
}

pub fn ramp_schedule(target_peak: f64, steps: usize) -> Vec<f64> {
    (1..=steps)
        .map(|i| target_peak * i as f64 / steps as f64)
        .collect()
}

/// Measures one window and maps its ratio to the state.
pub fn measure_state<R: Rng + ?Sized>(
    params: &ProfileParams,
    protocol: &Protocol,
    plant: &GaitPlant,
    rng: &mut R,
) -> Result<(f64, f64, CycleMeasurement)> {
    let m = plant.simulate_window(params, protocol.window_cycles, rng)?;
    let eta = m.work_ratio;
    Ok((eta, state_of(eta, protocol), m))
}

pub fn state_of(eta: f64, protocol: &Protocol) -> f64 {
    protocol.alpha * (eta - protocol.eta_target)
}

/// Applies the increment, clamps each timing to its interval and restores
/// the minimum separation by pushing the offset later (or, at the upper
/// offset bound, the peak earlier).
pub fn apply_action(params: &ProfileParams, u: &RlAction, bounds: &TimingBounds) -> ProfileParams {
    let mut t_peak = (params.t_peak + u.d_peak).clamp(bounds.peak_min, bounds.peak_max);
    let mut t_offset = (params.t_offset + u.d_offset).clamp(bounds.offset_min, bounds.offset_max);
    if t_offset < t_peak + bounds.min_separation {
        t_offset = t_peak + bounds.min_separation;
        if t_offset > bounds.offset_max {
            t_offset = bounds.offset_max;
            t_peak = t_offset - bounds.min_separation;
        }
    }
    ProfileParams {
        t_peak,
        t_offset,
        ..*params
    }
}

pub fn stopping_check(recent_costs: &[f64], bound: f64, consecutive: usize) -> bool {
    consecutive > 0
        && recent_costs.len() >= consecutive
        && recent_costs[recent_costs.len() - consecutive..]
            .iter()
            .all(|&c| c <= bound)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn initial_timings<R: Rng + ?Sized>(p: &Protocol, rng: &mut R) -> (f64, f64) {
    let b = &p.timing_bounds;
    let t_peak = p
        .initial_t_peak
        .unwrap_or_else(|| rng.random_range(b.peak_min..=b.peak_max));
    let t_offset = p.initial_t_offset.unwrap_or_else(|| {
        let lo = b.offset_min.max(t_peak + b.min_separation);
        rng.random_range(lo..=b.offset_max)
    });
    (t_peak, t_offset)
}

/// Runs one trial to success or budget exhaustion.
///
/// The learner (initial timings, initial policy, exploration) and the plant
/// noise draw from separate streams, both derived from `protocol.seed`.
pub fn run_trial(cfg: &TrialConfig) -> Result<TrialLog> {
    cfg.validate()?;
    let p = &cfg.protocol;
    let lc = &cfg.lspi;
    let plant = GaitPlant::new(cfg.plant.clone())?;
    let cost_weights = lc.cost_weights();
    let action_bounds = ActionBounds::new(lc.max_step)?;
    let policy_floor = lc
        .policy_min_eig
        .unwrap_or_else(|| cost_weights.min_action_eigenvalue());

    let mut learner_rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(splitmix(p.seed ^ splitmix(cfg.plant.seed)));

    let (t_peak, t_offset) = initial_timings(p, &mut learner_rng);
    let mut weights = match lc.initial_weights {
        Some(w) => w,
        None => WeightVector::random(&mut learner_rng, lc.initial_min_eig),
    };
    let mut params = ProfileParams {
        peak_torque: p.peak_torque,
        t_peak,
        t_offset,
        t_onset: 0.0,
    };
    params.validate()?;

    let mut log = TrialLog {
        seed: p.seed,
        records: Vec::new(),
        outcome: Outcome::BudgetExceeded,
        updates_to_converge: None,
        final_eta: None,
        final_t_peak: t_peak,
        final_t_offset: t_offset,
        policy_update_indices: Vec::new(),
        cycles_used: 0,
        solver_events: Vec::new(),
        final_weights: weights,
        last_window: None,
    };

    for peak in ramp_schedule(p.peak_torque, p.ramp_steps) {
        if log.cycles_used >= p.cycle_budget {
            return Ok(log);
        }
        plant.simulate_cycle(&params.with_peak_torque(peak), &mut noise_rng);
        log.cycles_used += 1;
    }

    let mut sigma = lc.exploration_sigma;
    let mut policy_version = 0;
    let mut samples: Vec<Sample> = Vec::new();
    let mut costs: Vec<f64> = Vec::new();
    let mut previous: Option<(f64, RlAction, f64)> = None;

    for k in 1.. {
        if log.cycles_used + p.window_cycles > p.cycle_budget {
            break;
        }
        let (eta, x, window) = measure_state(&params, p, &plant, &mut noise_rng)?;
        log.cycles_used += p.window_cycles;
        log.last_window = Some(window);

        if let Some((x_prev, u_prev, cost_prev)) = previous {
            samples.push(Sample {
                x: x_prev,
                u: u_prev,
                cost: cost_prev,
                x_next: x,
            });
            if samples.len().is_multiple_of(p.samples_per_policy_update) {
                match lspi::lstdq_solve(&samples, &weights, &action_bounds, lc.gamma, lc.ridge) {
                    Ok(mut w) => {
                        w.lift_action_block(policy_floor);
                        weights = w;
                        policy_version += 1;
                        log.policy_update_indices.push(samples.len());
                        sigma *= lc.exploration_decay;
                    }
                    Err(e) => log.solver_events.push(SolverEvent {
                        update: k,
                        message: e.to_string(),
                    }),
                }
            }
        }

        let greedy = lspi::greedy_action(&weights, x, &action_bounds);
        let u = lspi::explore_action(greedy, sigma, &action_bounds, &mut learner_rng);
        let cost = lspi::stage_cost(x, &u, &cost_weights);
        log.records.push(UpdateRecord {
            k,
            t_peak: params.t_peak,
            t_offset: params.t_offset,
            eta,
            x,
            d_peak: u.d_peak,
            d_offset: u.d_offset,
            cost,
            policy_version,
        });
        costs.push(cost);

        if stopping_check(&costs, p.stop_bound, p.stop_consecutive) {
            log.outcome = Outcome::Success;
            log.updates_to_converge = Some(k);
            break;
        }
        // the sample stores the increment that actually took effect, so a
        // clamped proposal does not teach the learner that actions are inert
        let next = apply_action(&params, &u, &p.timing_bounds);
        let applied = RlAction::new(next.t_peak - params.t_peak, next.t_offset - params.t_offset);
        params = next;
        previous = Some((x, applied, cost));
    }

    if let Some(last) = log.records.last() {
        log.final_t_peak = last.t_peak;
        log.final_t_offset = last.t_offset;
        let tail = &log.records[log.records.len().saturating_sub(p.stop_consecutive)..];
        log.final_eta = Some(tail.iter().map(|r| r.eta).sum::<f64>() / tail.len() as f64);
    }
    log.final_weights = weights;
    Ok(log)
}

/// Aggregate over independent seeded trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub seeds: Vec<u64>,
    pub n_trials: usize,
    pub n_success: usize,
    pub success_rate: f64,
    pub median_updates_to_converge: Option<f64>,
    pub max_updates_to_converge: Option<usize>,
    /// Final ratios of the successful trials.
    pub final_etas: Vec<f64>,
    pub final_eta_mean: Option<f64>,
    pub final_eta_std: Option<f64>,
}

impl BatchSummary {
    pub fn from_logs(logs: &[TrialLog]) -> Self {
        let wins: Vec<&TrialLog> = logs
            .iter()
            .filter(|l| l.outcome == Outcome::Success)
            .collect();
        let updates: Vec<f64> = wins
            .iter()
            .filter_map(|l| l.updates_to_converge.map(|u| u as f64))
            .collect();
        let final_etas: Vec<f64> = wins.iter().filter_map(|l| l.final_eta).collect();
        let n = logs.len();
        Self {
            seeds: logs.iter().map(|l| l.seed).collect(),
            n_trials: n,
            n_success: wins.len(),
            success_rate: if n == 0 {
                0.0
            } else {
                wins.len() as f64 / n as f64
            },
            median_updates_to_converge: (!updates.is_empty())
                .then(|| crate::stats::median(&updates)),
            max_updates_to_converge: wins.iter().filter_map(|l| l.updates_to_converge).max(),
            final_eta_mean: (!final_etas.is_empty()).then(|| crate::stats::mean(&final_etas)),
            final_eta_std: (final_etas.len() > 1).then(|| crate::stats::std_dev(&final_etas)),
            final_etas,
        }
    }
}

/// Runs one trial per seed in parallel; logs come back in seed order.
pub fn run_batch(cfg: &TrialConfig, seeds: &[u64]) -> Result<Vec<TrialLog>> {
    cfg.validate()?;
    seeds
        .par_iter()
        .map(|&s| run_trial(&cfg.clone().with_seed(s)))
        .collect()
}
