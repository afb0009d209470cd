//! Recursive Gaussian process regression fused into an extended Kalman
//! filter, for joint state estimation and online learning of a disturbance
//! that is only observable through the plant dynamics.
//!
//! * [`kernel`]: SE kernel, basis-vector grid, QR-based Gram solves
//! * [`rgp`]: stand-alone recursive GP with direct measurements
//! * [`fusion`]: pure GP prediction inside an EKF and the joint filter
//! * [`baseline`]: disturbance reconstruction by pseudo-inversion + RGP
//! * [`sim`]: benchmark plant, signal generators, scenario runner
//! * [`metrics`], [`harness`]: scoring, Monte Carlo runs, reports

pub mod baseline;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod kernel;
pub mod metrics;
pub mod rgp;
pub mod sim;

pub use error::{Error, Result};
pub use fusion::{EkfNoise, FusedBelief, LinearModel, PlantModel, PurePredictor, RgpDkf, StateBelief, StepLog};
pub use kernel::{GridSpec, KernelPrecomp, KernelSpec};
pub use metrics::{nll, rmse, RunMetrics};
pub use rgp::{GpModel, InferenceResult, RgpNoise, RgpState};
pub use sim::{EstimatorKind, EstimatorSettings, RunRecord, ScenarioConfig, ScenarioId};
