use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hipexo::plant::{self, GaitPlant, PlantConfig};
use hipexo::tuner::{self, BatchSummary, Outcome, TrialLog};
use hipexo::ProfileParams;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;

pub enum Status {
    Done,
    NotConverged,
}

pub(crate) fn prepare_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn write_csv<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn trial_summary(log: &TrialLog) -> serde_json::Value {
    json!({
        "seed": log.seed,
        "outcome": log.outcome,
        "updates_to_converge": log.updates_to_converge,
        "final_eta": log.final_eta,
        "final_t_peak": log.final_t_peak,
        "final_t_offset": log.final_t_offset,
        "cycles_used": log.cycles_used,
        "policy_update_indices": log.policy_update_indices,
        "solver_events": log.solver_events,
        "final_weights": log.final_weights,
        "last_cycle_eta": log.last_window.as_ref().map(|m| m.split().ratio().eta),
    })
}

#[derive(Serialize)]
struct TraceRow {
    time_s: f64,
    #[serde(rename = "torque_Nm")]
    torque_nm: f64,
    velocity_rad_s: f64,
}

pub fn trial(cfg: &RunConfig, out: &Path, seed: Option<u64>) -> Result<Status> {
    let mut tc = cfg.trial_config();
    if let Some(s) = seed {
        tc.protocol.seed = s;
    }
    let log = tuner::run_trial(&tc)?;
    prepare_dir(out)?;
    write_csv(&out.join("trial.csv"), &log.records)?;
    write_json(&out.join("summary.json"), &trial_summary(&log))?;
    if let Some(m) = &log.last_window {
        let rows = m
            .torque_trace
            .iter()
            .zip(&m.velocity_trace)
            .enumerate()
            .map(|(i, (&torque_nm, &velocity_rad_s))| TraceRow {
                time_s: i as f64 * m.dt,
                torque_nm,
                velocity_rad_s,
            });
        write_csv(&out.join("traces.csv"), rows)?;
    }
    println!(
        "seed {}: {:?} after {} updates, final eta {}",
        log.seed,
        log.outcome,
        log.records.len(),
        log.final_eta
            .map_or("n/a".to_string(), |e| format!("{e:.4}"))
    );
    Ok(match log.outcome {
        Outcome::Success => Status::Done,
        Outcome::BudgetExceeded => Status::NotConverged,
    })
}

pub fn batch(cfg: &RunConfig, out: &Path, n: u64, first: Option<u64>) -> Result<Status> {
    if n == 0 {
        bail!("--seeds must be at least 1");
    }
    let tc = cfg.trial_config();
    let first = first.unwrap_or(tc.protocol.seed);
    let seeds: Vec<u64> = (first..first + n).collect();
    let logs = tuner::run_batch(&tc, &seeds)?;
    let summary = BatchSummary::from_logs(&logs);

    let trials_dir = out.join("trials");
    prepare_dir(&trials_dir)?;
    for log in &logs {
        write_csv(
            &trials_dir.join(format!("seed_{}.csv", log.seed)),
            &log.records,
        )?;
    }
    let per_trial: Vec<_> = logs.iter().map(trial_summary).collect();
    write_json(
        &out.join("batch_summary.json"),
        &json!({ "summary": summary, "trials": per_trial }),
    )?;
    println!(
        "{} trials: success rate {:.3}, median updates {}, final eta mean {}",
        summary.n_trials,
        summary.success_rate,
        summary
            .median_updates_to_converge
            .map_or("n/a".into(), |m| m.to_string()),
        summary
            .final_eta_mean
            .map_or("n/a".into(), |m| format!("{m:.4}")),
    );
    Ok(Status::Done)
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub t_peak: f64,
    pub t_offset: f64,
    #[serde(rename = "Wp")]
    pub wp: Option<f64>,
    #[serde(rename = "Wn")]
    pub wn: Option<f64>,
    pub eta: Option<f64>,
    pub feasible: bool,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Noiseless grid; cells violating the minimum separation are flagged and
/// left without works.
pub fn sweep_rows(cfg: &RunConfig, grid: usize) -> Result<Vec<SweepRow>> {
    let plant = GaitPlant::new(PlantConfig {
        work_noise_std: 0.0,
        ..cfg.plant.clone()
    })?;
    let b = cfg.trial.timing_bounds;
    let mut rows = Vec::with_capacity(grid * grid);
    for &t_peak in &linspace(b.peak_min, b.peak_max, grid) {
        for &t_offset in &linspace(b.offset_min, b.offset_max, grid) {
            let feasible = t_offset >= t_peak + b.min_separation;
            let mut row = SweepRow {
                t_peak,
                t_offset,
                wp: None,
                wn: None,
                eta: None,
                feasible,
            };
            if feasible {
                let m = plant.noiseless_cycle(&ProfileParams::new(
                    cfg.trial.peak_torque,
                    t_peak,
                    t_offset,
                )?);
                row.wp = Some(m.positive_work);
                row.wn = Some(m.negative_work);
                row.eta = Some(m.work_ratio);
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn sweep(cfg: &RunConfig, out: &Path, grid: usize) -> Result<Status> {
    if grid == 0 {
        bail!("--grid must be at least 1");
    }
    let rows = sweep_rows(cfg, grid)?;
    prepare_dir(out)?;
    write_csv(&out.join("sweep.csv"), &rows)?;
    let etas: Vec<f64> = rows.iter().filter_map(|r| r.eta).collect();
    let lo = etas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = etas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "{} cells, {} feasible, eta in [{lo:.4}, {hi:.4}]",
        rows.len(),
        etas.len()
    );
    Ok(Status::Done)
}

pub fn calibrate(
    cfg: &RunConfig,
    out: &Path,
    zero_torque_eta: f64,
    target_std: f64,
    reps: usize,
) -> Result<Status> {
    let phase = plant::calibrate_residual_phase(&cfg.plant, zero_torque_eta)?;
    let calibrated = PlantConfig {
        residual_phase: phase,
        ..cfg.plant.clone()
    };
    let quiet = GaitPlant::new(PlantConfig {
        work_noise_std: 0.0,
        ..calibrated.clone()
    })?;
    let peak = plant::NOISE_CALIBRATION_PEAK;
    let t_offset = plant::level_set_offset(
        &quiet,
        cfg.trial.peak_torque,
        peak,
        cfg.trial.eta_target,
        cfg.trial.timing_bounds.offset_max,
    )?;
    let point = ProfileParams::new(cfg.trial.peak_torque, peak, t_offset)?;
    let seed = cfg.plant.seed;
    let noise = plant::calibrate_work_noise(
        &calibrated,
        &point,
        cfg.trial.window_cycles,
        target_std,
        reps,
        seed,
    )?;

    prepare_dir(out)?;
    write_json(
        &out.join("calibration.json"),
        &json!({
            "residual_phase": phase,
            "zero_torque_eta": quiet.zero_torque_ratio(),
            "operating_point": { "t_peak": peak, "t_offset": t_offset, "eta": cfg.trial.eta_target },
            "window_cycles": cfg.trial.window_cycles,
            "target_window_std": target_std,
            "work_noise_std": noise,
        }),
    )?;
    println!("residual_phase = {phase:.10}\nwork_noise_std = {noise:.5}");
    Ok(Status::Done)
}
