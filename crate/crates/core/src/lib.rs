//! Simulation and learning core for tuning the assistance timing of a hip
//! exoskeleton: torque profile, gait plant, mechanical-work metrics,
//! least-squares policy iteration, the tuning trial loop and the EMG-style
//! signal pipeline.

// `!(x > 0.0)` also rejects NaN, which is the point of those checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energetics;
pub mod error;
pub mod lspi;
pub mod plant;
pub mod profile;
pub mod signal;
pub mod stats;
pub mod tuner;

pub use energetics::{WorkRatio, WorkSplit};
pub use error::{Error, Result};
pub use lspi::{ActionBounds, CostWeights, RlAction, Sample, WeightVector};
pub use plant::{CycleMeasurement, GaitPlant, PlantConfig};
pub use profile::ProfileParams;
pub use signal::{FilterKind, FilterSpec, SignalTrace};
pub use tuner::{LspiConfig, Outcome, Protocol, TimingBounds, TrialConfig, TrialLog, UpdateRecord};
