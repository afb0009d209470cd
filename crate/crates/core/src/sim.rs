//! Benchmark plant, signal generators and scenario runner.
//!
//! The plant is the damped second-order system
//! `ẋ = [[0, 1], [-4, -4]] x + [0; 1] u + [0; 1] z` with the hidden disturbance
//! `z = -10 (1 + 0.1 ζ + ζ³)`, discretized with explicit Euler at the filter
//! rate. Measurements are either the position alone or the full state.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baseline::{LinearPlant, RgpB};
use crate::error::{invalid, Error, Result};
use crate::fusion::{EkfNoise, LinearModel, PurePredictor, RgpDkf, StepLog};
use crate::kernel::{GridSpec, KernelSpec};
use crate::rgp::{GpModel, RgpNoise, RgpState};

const STREAM_ZETA: u64 = 1;
const STREAM_MEASUREMENT: u64 = 2;

/// RNG for one named sub-stream of a run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Continuous-time benchmark plant.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPlant {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub e: DVector<f64>,
}

impl Default for BenchmarkPlant {
    fn default() -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, -4.0]),
            b: DVector::from_vec(vec![0.0, 1.0]),
            e: DVector::from_vec(vec![0.0, 1.0]),
        }
    }
}

impl BenchmarkPlant {
    /// `x + T (A x + B u + E z)`
    pub fn euler_step(&self, x: &DVector<f64>, u: f64, z: f64, sample_time: f64) -> Result<DVector<f64>> {
        if !(sample_time > 0.0) {
            return Err(invalid("sample_time", format!("must be > 0, got {sample_time}")));
        }
        if !(u.is_finite() && z.is_finite() && x.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("Euler step input"));
        }
        Ok(x + (&self.a * x + &self.b * u + &self.e * z) * sample_time)
    }

    pub fn output_matrix(output: MeasuredOutput) -> DMatrix<f64> {
        match output {
            MeasuredOutput::Position => DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            MeasuredOutput::FullState => DMatrix::identity(2, 2),
        }
    }

    /// Euler-discretized model for the filters.
    pub fn discretize(&self, sample_time: f64, output: MeasuredOutput) -> LinearModel {
        let n = self.a.nrows();
        LinearModel {
            a: DMatrix::identity(n, n) + &self.a * sample_time,
            b: DMatrix::from_column_slice(n, 1, (&self.b * sample_time).as_slice()),
            e: &self.e * sample_time,
            c: Self::output_matrix(output),
        }
    }

    pub fn baseline_plant(&self, sample_time: f64) -> Result<LinearPlant> {
        let d = self.discretize(sample_time, MeasuredOutput::FullState);
        LinearPlant::new(d.a, d.b, d.e, sample_time)
    }
}

/// `z(ζ) = -10 (1 + 0.1 ζ + ζ³)`
pub fn hidden_z(zeta: f64) -> f64 {
    -10.0 * (1.0 + 0.1 * zeta + zeta * zeta * zeta)
}

/// Low-pass filtered Gaussian noise for the GP input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColoredNoiseSpec {
    /// Target standard deviation of the stationary process.
    pub std: f64,
    /// First-order low-pass cutoff in Hz.
    pub cutoff_hz: f64,
}

impl Default for ColoredNoiseSpec {
    fn default() -> Self {
        Self {
            std: 0.6,
            cutoff_hz: 0.1,
        }
    }
}

/// First-order low-pass filtered white noise, scaled to stationary std
/// `target_std`. The recursion `v+ = a v + sqrt(1 - a²) σ w` with
/// `a = exp(-2π f_c T)` is started from its stationary distribution, so no
/// burn-in is needed.
pub fn colored_noise(rng: &mut impl Rng, steps: usize, sample_time: f64, cutoff_hz: f64, target_std: f64) -> Result<Vec<f64>> {
    if !(cutoff_hz > 0.0) {
        return Err(invalid("cutoff_hz", format!("must be > 0, got {cutoff_hz}")));
    }
    if !(target_std >= 0.0) {
        return Err(invalid("std", format!("must be >= 0, got {target_std}")));
    }
    let a = (-2.0 * std::f64::consts::PI * cutoff_hz * sample_time).exp();
    let drive = (1.0 - a * a).sqrt() * target_std;
    let mut out = Vec::with_capacity(steps);
    let mut v = target_std * rng.sample::<f64, _>(StandardNormal);
    for _ in 0..steps {
        out.push(v);
        v = a * v + drive * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(out)
}

/// Piecewise-constant input: `(start time, level)` breakpoints, optionally
/// repeated with a period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub steps: Vec<(f64, f64)>,
    #[serde(default)]
    pub period: Option<f64>,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            steps: vec![(0.0, 0.0), (5.0, 1.0), (10.0, -1.0), (15.0, 0.5), (20.0, -0.5)],
            period: Some(25.0),
        }
    }
}

impl StepSchedule {
    pub fn constant(level: f64) -> Self {
        Self {
            steps: vec![(0.0, level)],
            period: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(invalid("input.steps", "at least one step required"));
        }
        if self.steps.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(invalid("input.steps", "start times must be strictly increasing"));
        }
        if let Some(p) = self.period {
            if !(p > self.steps.last().map_or(0.0, |s| s.0)) {
                return Err(invalid("input.period", "must exceed the last start time"));
            }
        }
        Ok(())
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let t = match self.period {
            Some(p) => t.rem_euclid(p),
            None => t,
        };
        self.steps
            .iter()
            .take_while(|(start, _)| *start <= t)
            .last()
            .map_or(self.steps[0].1, |s| s.1)
    }
}

/// Samples `schedule` at `k T` for `k = 0..steps`.
pub fn step_input(schedule: &StepSchedule, steps: usize, sample_time: f64) -> Vec<f64> {
    (0..steps).map(|k| schedule.value_at(k as f64 * sample_time)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 3] = [ScenarioId::S1, ScenarioId::S2, ScenarioId::S3];

    pub fn output(self) -> MeasuredOutput {
        match self {
            ScenarioId::S1 | ScenarioId::S2 => MeasuredOutput::FullState,
            ScenarioId::S3 => MeasuredOutput::Position,
        }
    }

    pub fn high_noise(self) -> bool {
        matches!(self, ScenarioId::S1)
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ScenarioId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Self::S1),
            "S2" => Ok(Self::S2),
            "S3" => Ok(Self::S3),
            _ => Err(Error::Config(format!("unknown scenario `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasuredOutput {
    /// `y1 = [1 0] x`
    Position,
    /// `y2 = x`
    FullState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    RgpB,
    RgpDkf,
    PurePrediction,
}

impl EstimatorKind {
    /// The baseline reconstructs the disturbance from the full measured state.
    pub fn applies_to(self, scenario: ScenarioId) -> bool {
        self != Self::RgpB || scenario.output() == MeasuredOutput::FullState
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::RgpB => "rgp-b",
            EstimatorKind::RgpDkf => "rgp-dkf",
            EstimatorKind::PurePrediction => "pure-prediction",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgp-b" => Ok(Self::RgpB),
            "rgp-dkf" => Ok(Self::RgpDkf),
            "pure-prediction" => Ok(Self::PurePrediction),
            _ => Err(Error::Config(format!("unknown estimator `{s}`"))),
        }
    }
}

/// Noise magnitudes of the measurement channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseLevels {
    pub low: f64,
    pub high: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self { low: 0.01, high: 0.3 }
    }
}

/// Shared simulation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    pub sample_time: f64,
    pub duration: f64,
    pub noise: NoiseLevels,
    pub zeta: ColoredNoiseSpec,
    pub input: StepSchedule,
    /// Times (s) at which the GP state is captured.
    pub snapshot_times: Vec<f64>,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            sample_time: 0.01,
            duration: 100.0,
            noise: NoiseLevels::default(),
            zeta: ColoredNoiseSpec::default(),
            input: StepSchedule::default(),
            snapshot_times: vec![0.5, 100.0],
        }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_time > 0.0 && self.sample_time.is_finite()) {
            return Err(invalid("sim.sample_time", "must be > 0"));
        }
        if !(self.duration >= self.sample_time && self.duration.is_finite()) {
            return Err(invalid("sim.duration", "must cover at least one sample"));
        }
        if !(self.noise.low > 0.0 && self.noise.high > 0.0) {
            return Err(invalid("sim.noise", "measurement noise stds must be > 0"));
        }
        if !(self.zeta.cutoff_hz > 0.0 && self.zeta.std >= 0.0) {
            return Err(invalid("sim.zeta", "need cutoff_hz > 0 and std >= 0"));
        }
        self.input.validate()
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.sample_time).round() as usize
    }
}

/// Filter and GP settings shared by all estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSettings {
    pub kernel: KernelSpec,
    pub grid: GridSpec,
    /// `sigma_r`; defaults to `0.05 sigma_K`.
    pub residual_std: Option<f64>,
    /// `sigma_p`
    pub gp_process_std: f64,
    /// Diagonal of `Q_x`.
    pub process_var: Vec<f64>,
    /// Diagonal of `C_x,0`.
    pub initial_state_var: Vec<f64>,
    /// Baseline design value of `sigma_y,GP`; tuned per scenario when unset.
    pub sigma_y_gp: Option<f64>,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            kernel: KernelSpec {
                length_scale: 1.0,
                signal_std: 70.0,
            },
            grid: GridSpec {
                counts: vec![21],
                lower: vec![-2.5],
                upper: vec![2.5],
            },
            residual_std: None,
            gp_process_std: 0.0,
            process_var: vec![1e-8, 1e-8],
            initial_state_var: vec![1.0, 1.0],
            sigma_y_gp: None,
        }
    }
}

impl EstimatorSettings {
    pub fn residual_std(&self) -> f64 {
        self.residual_std.unwrap_or(0.05 * self.kernel.signal_std)
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.grid.validate()?;
        if self.grid.input_dim() != 1 {
            return Err(invalid("estimator.grid", "the benchmark GP has one input"));
        }
        if !(self.residual_std() >= 0.0) {
            return Err(invalid("estimator.residual_std", "must be >= 0"));
        }
        if !(self.gp_process_std >= 0.0) {
            return Err(invalid("estimator.gp_process_std", "must be >= 0"));
        }
        if self.process_var.len() != 2 || self.process_var.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("estimator.process_var", "need two non-negative entries"));
        }
        if self.initial_state_var.len() != 2 || self.initial_state_var.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("estimator.initial_state_var", "need two positive entries"));
        }
        if let Some(s) = self.sigma_y_gp {
            if !(s > 0.0) {
                return Err(invalid("estimator.sigma_y_gp", "must be > 0"));
            }
        }
        Ok(())
    }

    pub fn gp_model(&self) -> Result<Arc<GpModel>> {
        GpModel::new(self.kernel, self.grid.clone())
    }
}

/// One scenario realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub id: ScenarioId,
    pub seed: u64,
    pub sim: SimSettings,
}

impl ScenarioConfig {
    pub fn new(id: ScenarioId, seed: u64) -> Self {
        Self {
            id,
            seed,
            sim: SimSettings::default(),
        }
    }

    pub fn output(&self) -> MeasuredOutput {
        self.id.output()
    }

    pub fn noise_std(&self) -> f64 {
        if self.id.high_noise() {
            self.sim.noise.high
        } else {
            self.sim.noise.low
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.output() {
            MeasuredOutput::Position => 1,
            MeasuredOutput::FullState => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    /// Elapsed time (s) at which the state was captured.
    pub time: f64,
    pub state: RgpState,
    /// Smallest and largest `zeta` fed to the GP so far; `None` before the
    /// first step.
    pub visited: Option<(f64, f64)>,
}

/// Logged results of a single scenario run. All per-step vectors share one
/// length; `x_true` and `y` refer to the end of the step (`t + T`), matching
/// the corrected estimate in `logs`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scenario: ScenarioId,
    pub estimator: EstimatorKind,
    pub seed: u64,
    pub sample_time: f64,
    pub time: Vec<f64>,
    pub zeta: Vec<f64>,
    pub z_true: Vec<f64>,
    pub u: Vec<f64>,
    pub x_true: Vec<[f64; 2]>,
    pub y: Vec<Vec<f64>>,
    pub logs: Vec<StepLog>,
    pub snapshots: Vec<GpSnapshot>,
    /// GP state after the last step.
    pub final_gp: RgpState,
}

impl RunRecord {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// `[min, max]` of the GP input over the run.
    pub fn zeta_range(&self) -> (f64, f64) {
        self.zeta
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &z| (lo.min(z), hi.max(z)))
    }
}

enum Estimator {
    Dkf(RgpDkf<LinearModel>),
    Pure(PurePredictor<LinearModel>),
    Baseline(RgpB),
}

impl Estimator {
    fn gp_state(&self) -> RgpState {
        match self {
            Estimator::Dkf(f) => f.belief().gp_state(),
            Estimator::Pure(p) => p.gp_state().clone(),
            Estimator::Baseline(b) => b.state().clone(),
        }
    }
}

/// Simulates one scenario and steps `estimator` once per sample.
///
/// `frozen_gp` is the GP used by the pure-prediction estimator (a fresh prior
/// when `None`); it is ignored by the learning estimators. The baseline needs
/// `settings.sigma_y_gp`.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    estimator: EstimatorKind,
    settings: &EstimatorSettings,
    frozen_gp: Option<&RgpState>,
) -> Result<RunRecord> {
    cfg.sim.validate()?;
    settings.validate()?;
    if !estimator.applies_to(cfg.id) {
        return Err(Error::Incompatible {
            estimator: estimator.to_string(),
            scenario: cfg.id.to_string(),
            reason: "the baseline needs the full state measured",
        });
    }

    let plant = BenchmarkPlant::default();
    let t = cfg.sim.sample_time;
    let steps = cfg.sim.steps();
    let gp = settings.gp_model()?;
    let model = plant.discretize(t, cfg.output());
    let noise_std = cfg.noise_std();
    let ny = cfg.output_dim();
    let sigma_r = settings.residual_std();

    let mut est = match estimator {
        EstimatorKind::RgpDkf | EstimatorKind::PurePrediction => {
            let noise = EkfNoise::new(
                DMatrix::from_diagonal(&DVector::from_vec(settings.process_var.clone())),
                DMatrix::identity(ny, ny) * (noise_std * noise_std),
                sigma_r,
            )?;
            let cov0 = DMatrix::from_diagonal(&DVector::from_vec(settings.initial_state_var.clone()));
            if estimator == EstimatorKind::RgpDkf {
                Estimator::Dkf(RgpDkf::new(gp.clone(), model.clone(), noise, settings.gp_process_std, DVector::zeros(2), cov0)?)
            } else {
                let frozen = frozen_gp.cloned().unwrap_or_else(|| gp.init_state());
                Estimator::Pure(PurePredictor::new(gp.clone(), frozen, model.clone(), noise, DVector::zeros(2), cov0)?)
            }
        }
        EstimatorKind::RgpB => {
            let design = settings
                .sigma_y_gp
                .ok_or_else(|| invalid("estimator.sigma_y_gp", "the baseline needs a design value"))?;
            let noise = RgpNoise {
                process_std: settings.gp_process_std,
                measurement_std: design,
                cov_bound: None,
            };
            Estimator::Baseline(RgpB::new(gp.clone(), plant.baseline_plant(t)?, noise, sigma_r)?)
        }
    };

    let zeta = colored_noise(
        &mut stream_rng(cfg.seed, STREAM_ZETA),
        steps,
        t,
        cfg.sim.zeta.cutoff_hz,
        cfg.sim.zeta.std,
    )?;
    let u = step_input(&cfg.sim.input, steps, t);
    let mut meas_rng = stream_rng(cfg.seed, STREAM_MEASUREMENT);
    let mut measure = |x: &DVector<f64>| -> DVector<f64> {
        let clean = &model.c * x;
        clean.map(|v| v + noise_std * meas_rng.sample::<f64, _>(StandardNormal))
    };

    let mut rec = RunRecord {
        scenario: cfg.id,
        estimator,
        seed: cfg.seed,
        sample_time: t,
        time: Vec::with_capacity(steps),
        zeta: Vec::with_capacity(steps),
        z_true: Vec::with_capacity(steps),
        u: Vec::with_capacity(steps),
        x_true: Vec::with_capacity(steps),
        y: Vec::with_capacity(steps),
        logs: Vec::with_capacity(steps),
        snapshots: Vec::new(),
        final_gp: gp.init_state(),
    };

    let mut snap_times: Vec<f64> = cfg.sim.snapshot_times.clone();
    snap_times.sort_by(f64::total_cmp);
    let mut next_snap = 0;
    while next_snap < snap_times.len() && snap_times[next_snap] <= 0.0 {
        rec.snapshots.push(GpSnapshot {
            time: 0.0,
            state: est.gp_state(),
            visited: None,
        });
        next_snap += 1;
    }

    let mut x = DVector::zeros(2);
    let mut y = measure(&x);
    let mut visited = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..steps {
        let zeta_k = [zeta[k]];
        let z_k = hidden_z(zeta[k]);
        let u_k = DVector::from_element(1, u[k]);
        let x_next = plant.euler_step(&x, u[k], z_k, t)?;
        let y_next = measure(&x_next);

        let log = match &mut est {
            Estimator::Dkf(f) => f.step(&u_k, &zeta_k, &y_next, true)?,
            Estimator::Pure(p) => p.step(&u_k, &zeta_k, &y_next)?,
            Estimator::Baseline(b) => b.step(&zeta_k, &y, &y_next, &u_k)?,
        };

        rec.time.push(k as f64 * t);
        rec.zeta.push(zeta[k]);
        visited = (visited.0.min(zeta[k]), visited.1.max(zeta[k]));
        rec.z_true.push(z_k);
        rec.u.push(u[k]);
        rec.x_true.push([x_next[0], x_next[1]]);
        rec.y.push(y_next.iter().copied().collect());
        rec.logs.push(log);

        let elapsed = (k + 1) as f64 * t;
        while next_snap < snap_times.len() && snap_times[next_snap] <= elapsed + 0.5 * t {
            rec.snapshots.push(GpSnapshot {
                time: snap_times[next_snap],
                state: est.gp_state(),
                visited: Some(visited),
            });
            next_snap += 1;
        }

        x = x_next;
        y = y_next;
    }
    rec.final_gp = est.gp_state();
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn euler_by_hand() {
        let p = BenchmarkPlant::default();
        let x = p.euler_step(&DVector::zeros(2), 1.0, 0.0, 0.01).unwrap();
        assert_abs_diff_eq!(x[0], 0.0);
        assert_abs_diff_eq!(x[1], 0.01, epsilon = 1e-15);
        assert_eq!(p.euler_step(&DVector::zeros(2), 0.0, 0.0, 0.01).unwrap(), DVector::zeros(2));
        let x = p.euler_step(&DVector::from_vec(vec![1.0, 0.0]), 0.0, 0.0, 0.01).unwrap();
        assert_abs_diff_eq!(x[0], 1.0);
        assert_abs_diff_eq!(x[1], -0.04, epsilon = 1e-15);
        assert!(p.euler_step(&DVector::zeros(2), f64::NAN, 0.0, 0.01).is_err());
        assert!(p.euler_step(&DVector::zeros(2), 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn plant_is_stable() {
        let eig = BenchmarkPlant::default().a.complex_eigenvalues();
        for ev in eig.iter() {
            assert_abs_diff_eq!(ev.re, -2.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn hidden_function_values() {
        assert_eq!(hidden_z(0.0), -10.0);
        assert_abs_diff_eq!(hidden_z(1.0), -21.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hidden_z(-1.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn discretized_model_matches_euler() {
        let p = BenchmarkPlant::default();
        let m = p.discretize(0.01, MeasuredOutput::FullState);
        use crate::fusion::PlantModel;
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let direct = p.euler_step(&x, 0.4, -12.0, 0.01).unwrap();
        let via = m.transition(&x, &DVector::from_element(1, 0.4), -12.0);
        assert!((direct - via).amax() < 1e-15);
        assert_eq!(p.discretize(0.01, MeasuredOutput::Position).c.nrows(), 1);
    }

    #[test]
    fn colored_noise_zero_scale() {
        let v = colored_noise(&mut stream_rng(3, 1), 1000, 0.01, 0.1, 0.0).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
        assert!(colored_noise(&mut stream_rng(3, 1), 10, 0.01, 0.0, 1.0).is_err());
    }

    #[test]
    fn colored_noise_lag_one_correlation() {
        let v = colored_noise(&mut stream_rng(11, 1), 200_000, 0.01, 0.1, 1.0).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        let cov1 = v.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>();
        let rho = cov1 / var;
        let expect = (-2.0 * std::f64::consts::PI * 0.1 * 0.01).exp();
        assert!(rho > 0.9);
        assert_abs_diff_eq!(rho, expect, epsilon = 5e-3);
    }

    #[test]
    fn step_schedules() {
        let c = StepSchedule::constant(0.3);
        assert!(step_input(&c, 100, 0.1).iter().all(|&u| u == 0.3));

        let s = StepSchedule {
            steps: vec![(0.0, 0.0), (5.0, 1.0)],
            period: None,
        };
        let u = step_input(&s, 1000, 0.01);
        assert!(u[..500].iter().all(|&v| v == 0.0));
        assert!(u[500..].iter().all(|&v| v == 1.0));

        let d = StepSchedule::default();
        d.validate().unwrap();
        let mut levels: Vec<f64> = step_input(&d, 10_000, 0.01);
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        assert!(levels.len() >= 4);
        assert!(levels.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn baseline_refuses_position_only() {
        let mut settings = EstimatorSettings::default();
        settings.sigma_y_gp = Some(10.0);
        let cfg = ScenarioConfig::new(ScenarioId::S3, 0);
        assert!(matches!(
            run_scenario(&cfg, EstimatorKind::RgpB, &settings, None),
            Err(Error::Incompatible { .. })
        ));
    }

    #[test]
    fn scenario_taxonomy() {
        let s1 = ScenarioConfig::new(ScenarioId::S1, 0);
        let s2 = ScenarioConfig::new(ScenarioId::S2, 0);
        let s3 = ScenarioConfig::new(ScenarioId::S3, 0);
        assert_eq!((s1.noise_std(), s1.output()), (0.3, MeasuredOutput::FullState));
        assert_eq!((s2.noise_std(), s2.output()), (0.01, MeasuredOutput::FullState));
        assert_eq!((s3.noise_std(), s3.output()), (0.01, MeasuredOutput::Position));
        assert_eq!("s2".parse::<ScenarioId>().unwrap(), ScenarioId::S2);
        assert_eq!("rgp-dkf".parse::<EstimatorKind>().unwrap(), EstimatorKind::RgpDkf);
    }

    #[test]
    fn short_run_shapes_and_determinism() {
        let mut cfg = ScenarioConfig::new(ScenarioId::S2, 7);
        cfg.sim.duration = 2.0;
        cfg.sim.snapshot_times = vec![0.5, 2.0];
        let settings = EstimatorSettings::default();
        let a = run_scenario(&cfg, EstimatorKind::RgpDkf, &settings, None).unwrap();
        let b = run_scenario(&cfg, EstimatorKind::RgpDkf, &settings, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        assert_eq!(a.logs.len(), 200);
        assert_eq!(a.x_true.len(), 200);
        assert_eq!(a.snapshots.len(), 2);
        assert_eq!(a.snapshots[1].state, a.final_gp);
    }
}
