//! `hipexo`: run tuning trials, seeded batches, noiseless sweeps, plant
//! calibration and offline analysis.

mod analyze;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status when a trial ends without converging.
const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "hipexo",
    version,
    about = "Hip exoskeleton timing tuner on a simulated gait plant"
)]
struct Cli {
    /// TOML config with [trial], [plant], [lspi] and [filter] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. --set trial.cycle_budget=400.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one tuning trial.
    Trial {
        #[command(flatten)]
        out: OutArgs,
        /// Trial seed (overrides trial.seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run independent trials over consecutive seeds.
    Batch {
        #[command(flatten)]
        out: OutArgs,
        /// Number of trials.
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        /// First seed (defaults to trial.seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Noiseless work-ratio map over the timing bounds.
    Sweep {
        #[command(flatten)]
        out: OutArgs,
        /// Grid points per axis.
        #[arg(long, default_value_t = 26)]
        grid: usize,
    },
    /// Calibrate the residual phase and the work noise of the plant.
    Calibrate {
        #[command(flatten)]
        out: OutArgs,
        /// Target zero-torque work ratio.
        #[arg(long, default_value_t = hipexo::plant::ZERO_TORQUE_RATIO)]
        zero_torque_eta: f64,
        /// Target standard deviation of the windowed work ratio.
        #[arg(long, default_value_t = hipexo::plant::NOISE_CALIBRATION_STD)]
        target_std: f64,
        /// Monte-Carlo windows per noise probe.
        #[arg(long, default_value_t = 4000)]
        reps: usize,
    },
    /// Work metrics, stride averages and EMG-style envelopes from CSV logs.
    Analyze {
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        inputs: analyze::Inputs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = config::RunConfig::load(cli.config.as_deref(), &cli.overrides).and_then(|cfg| {
        match cli.command {
            Command::Trial { out, seed } => commands::trial(&cfg, &out.out, seed),
            Command::Batch { out, seeds, seed } => commands::batch(&cfg, &out.out, seeds, seed),
            Command::Sweep { out, grid } => commands::sweep(&cfg, &out.out, grid),
            Command::Calibrate {
                out,
                zero_torque_eta,
                target_std,
                reps,
            } => commands::calibrate(&cfg, &out.out, zero_torque_eta, target_std, reps),
            Command::Analyze { out, inputs } => analyze::run(&cfg, &out.out, &inputs),
        }
    });
    match result {
        Ok(commands::Status::Done) => ExitCode::SUCCESS,
        Ok(commands::Status::NotConverged) => ExitCode::from(EXIT_NOT_CONVERGED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
