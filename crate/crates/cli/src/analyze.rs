use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use hipexo::energetics;
use hipexo::signal::{self, CycleAverage, SignalTrace};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::commands::{prepare_dir, write_csv, write_json, Status};
use crate::config::RunConfig;

#[derive(Debug, Args)]
pub struct Inputs {
    /// CSV with columns time_s,torque_Nm,velocity_rad_s.
    #[arg(long)]
    power: Option<PathBuf>,
    /// CSV with columns time_s,value.
    #[arg(long)]
    signal: Option<PathBuf>,
    /// CSV with a `start` column of cycle-start sample indices.
    #[arg(long)]
    cycles: Option<PathBuf>,
    /// Sample rate of --signal in Hz; inferred from time_s when omitted.
    #[arg(long)]
    rate: Option<f64>,
    /// Divide the envelope by this peak (e.g. from free walking).
    #[arg(long)]
    reference_peak: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct PowerRow {
    time_s: f64,
    #[serde(rename = "torque_Nm")]
    torque: f64,
    velocity_rad_s: f64,
}

#[derive(Debug, Deserialize)]
struct SignalRow {
    time_s: f64,
    value: f64,
}

#[derive(Debug, Deserialize)]
struct CycleRow {
    start: usize,
}

#[derive(Serialize)]
struct CurveRow {
    phase_pct: f64,
    mean: f64,
    std: f64,
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{}: malformed row {}", path.display(), i + 1)))
        .collect()
}

fn check_finite(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    for (i, v) in values.enumerate() {
        if !v.is_finite() {
            bail!("{}: non-finite value in row {}", path.display(), i + 1);
        }
    }
    Ok(())
}

/// Uniform sample spacing of a time column.
fn sample_interval(path: &Path, times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        bail!("{}: need at least 2 rows", path.display());
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !dt.is_finite() || dt <= 0.0 {
        bail!("{}: time_s must increase", path.display());
    }
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
            bail!("{}: non-uniform time step at row {}", path.display(), i + 2);
        }
    }
    Ok(dt)
}

fn curve_rows(avg: &CycleAverage) -> Vec<CurveRow> {
    avg.phase
        .iter()
        .zip(&avg.mean)
        .zip(&avg.std)
        .map(|((&phase_pct, &mean), &std)| CurveRow {
            phase_pct,
            mean,
            std,
        })
        .collect()
}

/// Trailing strides to average: the configured count, or all available.
fn stride_count(starts: &[usize], configured: usize) -> Result<usize> {
    match starts.len() {
        0 | 1 => bail!("cycle starts must list at least 2 indices"),
        n => Ok(configured.min(n - 1)),
    }
}

fn analyze_power(
    path: &Path,
    cycles: Option<&[usize]>,
    cfg: &RunConfig,
    out: &Path,
) -> Result<Value> {
    let rows: Vec<PowerRow> = read_rows(path)?;
    check_finite(
        path,
        rows.iter()
            .flat_map(|r| [r.time_s, r.torque, r.velocity_rad_s]),
    )?;
    let times: Vec<f64> = rows.iter().map(|r| r.time_s).collect();
    let dt = sample_interval(path, &times)?;
    let torque: Vec<f64> = rows.iter().map(|r| r.torque).collect();
    let velocity: Vec<f64> = rows.iter().map(|r| r.velocity_rad_s).collect();
    let power = energetics::power_series(&torque, &velocity)?;
    let split = energetics::work_split(&power, dt)?;
    let ratio = split.ratio();
    let mut result = json!({
        "n_samples": rows.len(),
        "rate_hz": 1.0 / dt,
        "positive_work": split.positive_work,
        "negative_work": split.negative_work,
        "eta": ratio.eta,
        "degenerate": ratio.degenerate,
    });

    if let Some(starts) = cycles {
        let n = stride_count(starts, cfg.filter.last_strides)?;
        let tail = &starts[starts.len() - n - 1..];
        let (mut pos, mut neg) = (0.0, 0.0);
        for w in tail.windows(2) {
            let end = (w[1] + 1).min(power.len());
            let s = energetics::work_split(&power[w[0]..end], dt)?;
            pos += s.positive_work;
            neg += s.negative_work;
        }
        let mean = energetics::WorkSplit::new(pos / n as f64, neg / n as f64)?;
        result["strides"] = json!({
            "count": n,
            "positive_work": mean.positive_work,
            "negative_work": mean.negative_work,
            "eta": mean.ratio().eta,
        });
        let avg = signal::cycle_average(&power, starts, n, cfg.filter.resample_points)?;
        write_csv(&out.join("power_cycle.csv"), curve_rows(&avg))?;
    }
    Ok(result)
}

#[derive(Serialize)]
struct EnvelopeRow {
    time_s: f64,
    envelope: f64,
    normalized: Option<f64>,
}

fn analyze_signal(
    path: &Path,
    inputs: &Inputs,
    cycles: Option<&[usize]>,
    cfg: &RunConfig,
    out: &Path,
) -> Result<Value> {
    let rows: Vec<SignalRow> = read_rows(path)?;
    check_finite(path, rows.iter().flat_map(|r| [r.time_s, r.value]))?;
    let rate = match inputs.rate {
        Some(r) => r,
        None => 1.0 / sample_interval(path, &rows.iter().map(|r| r.time_s).collect::<Vec<_>>())?,
    };
    let trace = SignalTrace::new(rows.iter().map(|r| r.value).collect(), rate)?;
    let envelope = signal::linear_envelope_with(&trace, &cfg.filter)?;
    let normalized = inputs
        .reference_peak
        .map(|p| signal::normalize_to_peak(&envelope, p))
        .transpose()?;

    let mut result = json!({
        "n_samples": trace.len(),
        "rate_hz": rate,
        "rms": signal::rms(trace.samples())?,
        "envelope_peak": envelope.max(),
        "envelope_rms": signal::rms(envelope.samples())?,
    });
    if let Some(n) = &normalized {
        result["normalized_peak"] = json!(n.max());
        result["normalized_rms"] = json!(signal::rms(n.samples())?);
    }
    let env_rows = envelope
        .times()
        .zip(envelope.samples())
        .enumerate()
        .map(|(i, (time_s, &e))| EnvelopeRow {
            time_s,
            envelope: e,
            normalized: normalized.as_ref().map(|n| n.samples()[i]),
        });
    write_csv(&out.join("envelope.csv"), env_rows)?;

    if let Some(starts) = cycles {
        let n = stride_count(starts, cfg.filter.last_strides)?;
        let source = normalized.as_ref().unwrap_or(&envelope);
        let avg = signal::cycle_average(source.samples(), starts, n, cfg.filter.resample_points)?;
        result["strides"] = json!({
            "count": n,
            "mean_curve_rms": signal::rms(&avg.mean)?,
            "mean_curve_peak": avg.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
        write_csv(&out.join("envelope_cycle.csv"), curve_rows(&avg))?;
    }
    Ok(result)
}

pub fn run(cfg: &RunConfig, out: &Path, inputs: &Inputs) -> Result<Status> {
    if inputs.power.is_none() && inputs.signal.is_none() {
        bail!("analyze needs --power and/or --signal");
    }
    let cycles = inputs
        .cycles
        .as_deref()
        .map(|p| {
            read_rows::<CycleRow>(p)
                .map(|rows| rows.into_iter().map(|r| r.start).collect::<Vec<_>>())
        })
        .transpose()?;
    prepare_dir(out)?;
    let mut metrics = Map::new();
    if let Some(p) = &inputs.power {
        metrics.insert(
            "power".into(),
            analyze_power(p, cycles.as_deref(), cfg, out)?,
        );
    }
    if let Some(p) = &inputs.signal {
        metrics.insert(
            "signal".into(),
            analyze_signal(p, inputs, cycles.as_deref(), cfg, out)?,
        );
    }
    let metrics = Value::Object(metrics);
    write_json(&out.join("metrics.json"), &metrics)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(Status::Done)
}
