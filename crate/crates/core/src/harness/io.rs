//! CSV run records and GP sweep tables.
//!
//! Run-record columns, one row per step:
//!
//! | column | meaning |
//! |---|---|
//! | `step` | step index `k` |
//! | `time` | `k T` (s) |
//! | `zeta` | GP input at step `k` |
//! | `z_true` | hidden disturbance at step `k` |
//! | `u` | control input |
//! | `x1_true`, `x2_true` | true state at `t + T` |
//! | `y1`, `y2` | measurement at `t + T` (`y2` empty when only `y1` is measured) |
//! | `mu_x1`, `mu_x2` | estimated state at `t + T` |
//! | `var_x1`, `var_x2` | its marginal variances (`NaN` for the baseline) |
//! | `mu_z` | GP predictive mean at `zeta` |
//! | `var_z` | GP predictive variance |
//! | `var_z_inflated` | `var_z + sigma_r^2` |
//! | `innov1`, `innov2` | innovation components (empty when absent) |
//! | `train` | `1` when the GP was trained at this step |
//!
//! Floats are written with 17 significant digits so they read back exactly.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::StepLog;
use crate::metrics::{evaluate, RunMetrics};
use crate::sim::{RunRecord, ScenarioId, EstimatorKind};

pub const RUN_HEADER: [&str; 20] = [
    "step", "time", "zeta", "z_true", "u", "x1_true", "x2_true", "y1", "y2", "mu_x1", "mu_x2", "var_x1", "var_x2",
    "mu_z", "var_z", "var_z_inflated", "innov1", "innov2", "train", "seed",
];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<&f64>) -> String {
    v.map_or_else(String::new, |x| fmt_f64(*x))
}

pub fn write_run_csv(rec: &RunRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RUN_HEADER)?;
    for k in 0..rec.len() {
        let l = &rec.logs[k];
        let row = [
            k.to_string(),
            fmt_f64(rec.time[k]),
            fmt_f64(rec.zeta[k]),
            fmt_f64(rec.z_true[k]),
            fmt_f64(rec.u[k]),
            fmt_f64(rec.x_true[k][0]),
            fmt_f64(rec.x_true[k][1]),
            opt(rec.y[k].first()),
            opt(rec.y[k].get(1)),
            opt(l.state_mean.first()),
            opt(l.state_mean.get(1)),
            opt(l.state_var.first()),
            opt(l.state_var.get(1)),
            fmt_f64(l.gp_mean),
            fmt_f64(l.gp_var),
            fmt_f64(l.gp_var_inflated),
            opt(l.innovation.first()),
            opt(l.innovation.get(1)),
            u8::from(l.train).to_string(),
            rec.seed.to_string(),
        ];
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse(field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("bad float `{field}` in run record")))
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse(field).map(Some)
    }
}

/// Reads back a run record written by [`write_run_csv`]. Snapshots and the
/// final GP state are not part of the CSV and come back empty.
pub fn read_run_csv(path: &Path, scenario: ScenarioId, estimator: EstimatorKind) -> Result<RunRecord> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != RUN_HEADER {
        return Err(Error::Config(format!("unexpected run-record header in {}", path.display())));
    }
    let mut rec = RunRecord {
        scenario,
        estimator,
        seed: 0,
        sample_time: f64::NAN,
        time: Vec::new(),
        zeta: Vec::new(),
        z_true: Vec::new(),
        u: Vec::new(),
        x_true: Vec::new(),
        y: Vec::new(),
        logs: Vec::new(),
        snapshots: Vec::new(),
        final_gp: crate::rgp::RgpState {
            mean: nalgebra::DVector::zeros(0),
            cov: nalgebra::DMatrix::zeros(0, 0),
            step: 0,
        },
    };
    for row in r.records() {
        let row = row?;
        let f = |i: usize| row.get(i).unwrap_or("");
        let step: u64 = f(0).parse().map_err(|_| Error::Config("bad step".into()))?;
        rec.time.push(parse(f(1))?);
        rec.zeta.push(parse(f(2))?);
        rec.z_true.push(parse(f(3))?);
        rec.u.push(parse(f(4))?);
        rec.x_true.push([parse(f(5))?, parse(f(6))?]);
        rec.y.push([parse_opt(f(7))?, parse_opt(f(8))?].into_iter().flatten().collect());
        rec.logs.push(StepLog {
            step: step + 1,
            state_mean: [parse_opt(f(9))?, parse_opt(f(10))?].into_iter().flatten().collect(),
            state_var: [parse_opt(f(11))?, parse_opt(f(12))?].into_iter().flatten().collect(),
            gp_mean: parse(f(13))?,
            gp_var: parse(f(14))?,
            gp_var_inflated: parse(f(15))?,
            innovation: [parse_opt(f(16))?, parse_opt(f(17))?].into_iter().flatten().collect(),
            train: f(18) == "1",
        });
        rec.seed = f(19).parse().map_err(|_| Error::Config("bad seed".into()))?;
    }
    if rec.time.len() >= 2 {
        rec.sample_time = rec.time[1] - rec.time[0];
    }
    Ok(rec)
}

/// Recomputes metrics from a persisted run record.
pub fn metrics_from_csv(path: &Path, scenario: ScenarioId, estimator: EstimatorKind, warmup: f64) -> Result<RunMetrics> {
    evaluate(&read_run_csv(path, scenario, estimator)?, warmup)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// One row of a GP sweep table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub zeta: f64,
    pub mean: f64,
    /// Predictive std including `sigma_r`.
    pub std: f64,
    pub hidden: f64,
}

impl SweepPoint {
    pub fn lower(&self) -> f64 {
        self.mean - 2.0 * self.std
    }
    pub fn upper(&self) -> f64 {
        self.mean + 2.0 * self.std
    }
    pub fn covers_hidden(&self) -> bool {
        self.hidden >= self.lower() && self.hidden <= self.upper()
    }
}

pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["zeta", "mean", "lower_2sigma", "upper_2sigma", "std", "hidden_z"])?;
    for p in points {
        w.write_record([
            fmt_f64(p.zeta),
            fmt_f64(p.mean),
            fmt_f64(p.lower()),
            fmt_f64(p.upper()),
            fmt_f64(p.std),
            fmt_f64(p.hidden),
        ])?;
    }
    w.flush()?;
    Ok(())
}
