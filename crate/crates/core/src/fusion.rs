//! RGP inside an EKF.
//!
//! Two flavours:
//! * pure prediction: a frozen GP supplies the disturbance as a noisy input
//!   to an ordinary EKF over the plant states;
//! * the joint filter ([`RgpDkf`]): the GP basis values are appended to the
//!   state vector so indirect measurements of the plant train the GP through
//!   the state/GP cross-covariance.
//!
//! Jacobians are always taken at `(mu_x^g, mu_z^p, u_k)`, i.e. at the
//! corrected state of the previous step and the current GP prediction.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::rgp::{symmetrize, GpModel, RgpState};

/// Discrete-time plant `x+ = f(x, u, z)`, `y = h(x)` with a scalar disturbance.
pub trait PlantModel {
    fn state_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>, z: f64) -> DVector<f64>;
    fn output(&self, x: &DVector<f64>) -> DVector<f64>;
    /// `df/dx`
    fn state_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>, z: f64) -> DMatrix<f64>;
    /// `df/dz`
    fn disturbance_gain(&self, x: &DVector<f64>, u: &DVector<f64>, z: f64) -> DVector<f64>;
    /// `dh/dx`
    fn output_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `x+ = A x + B u + e z`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DVector<f64>,
    pub c: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, e: DVector<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        check_dim("A columns", n, a.ncols())?;
        check_dim("B rows", n, b.nrows())?;
        check_dim("e length", n, e.len())?;
        check_dim("C columns", n, c.ncols())?;
        Ok(Self { a, b, e, c })
    }
}

impl PlantModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>, z: f64) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.e * z
    }
    fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }
    fn state_jacobian(&self, _: &DVector<f64>, _: &DVector<f64>, _: f64) -> DMatrix<f64> {
        self.a.clone()
    }
    fn disturbance_gain(&self, _: &DVector<f64>, _: &DVector<f64>, _: f64) -> DVector<f64> {
        self.e.clone()
    }
    fn output_jacobian(&self, _: &DVector<f64>) -> DMatrix<f64> {
        self.c.clone()
    }
}

/// Largest mixed relative error between the analytic Jacobians of `model`
/// and central finite differences at `(x, u, z)`.
///
/// Each entry is compared as `|analytic - fd| / max(|analytic|, 1)`.
pub fn jacobian_mismatch<M: PlantModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
    z: f64,
) -> f64 {
    let n = model.state_dim();
    let rel = |a: f64, fd: f64| (a - fd).abs() / a.abs().max(1.0);
    let mut worst = 0.0f64;

    let a = model.state_jacobian(x, u, z);
    let h = model.output_jacobian(x);
    for j in 0..n {
        let step = 1e-6 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let df = (model.transition(&xp, u, z) - model.transition(&xm, u, z)) / (2.0 * step);
        let dh = (model.output(&xp) - model.output(&xm)) / (2.0 * step);
        for i in 0..n {
            worst = worst.max(rel(a[(i, j)], df[i]));
        }
        for i in 0..dh.len() {
            worst = worst.max(rel(h[(i, j)], dh[i]));
        }
    }

    let e = model.disturbance_gain(x, u, z);
    let step = 1e-6 * z.abs().max(1.0);
    let dz = (model.transition(x, u, z + step) - model.transition(x, u, z - step)) / (2.0 * step);
    for i in 0..n {
        worst = worst.max(rel(e[i], dz[i]));
    }
    worst
}

/// Noise settings of the state filter.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfNoise {
    /// `Q_x`
    pub process_cov: DMatrix<f64>,
    /// `R_x`
    pub measurement_cov: DMatrix<f64>,
    /// `sigma_r`, added in quadrature to every GP prediction variance.
    pub residual_std: f64,
}

impl EkfNoise {
    pub fn new(process_cov: DMatrix<f64>, measurement_cov: DMatrix<f64>, residual_std: f64) -> Result<Self> {
        let noise = Self {
            process_cov,
            measurement_cov,
            residual_std,
        };
        noise.validate()?;
        Ok(noise)
    }

    pub fn validate(&self) -> Result<()> {
        let q = &self.process_cov;
        let r = &self.measurement_cov;
        check_dim("Q_x columns", q.nrows(), q.ncols())?;
        check_dim("R_x columns", r.nrows(), r.ncols())?;
        let asym = |m: &DMatrix<f64>| (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0);
        if asym(q) {
            return Err(invalid("Q_x", "not symmetric"));
        }
        if asym(r) {
            return Err(invalid("R_x", "not symmetric"));
        }
        if q.nrows() > 0 && q.clone().symmetric_eigen().eigenvalues.min() < -1e-12 * q.amax() {
            return Err(invalid("Q_x", "not positive semidefinite"));
        }
        if r.clone().cholesky().is_none() {
            return Err(invalid("R_x", "not positive definite"));
        }
        if !(self.residual_std.is_finite() && self.residual_std >= 0.0) {
            return Err(invalid("sigma_r", format!("must be >= 0, got {}", self.residual_std)));
        }
        Ok(())
    }

    pub fn residual_var(&self) -> f64 {
        self.residual_std * self.residual_std
    }

    fn check_against<M: PlantModel + ?Sized>(&self, model: &M) -> Result<()> {
        check_dim("Q_x size", model.state_dim(), self.process_cov.nrows())?;
        check_dim("R_x size", model.output_dim(), self.measurement_cov.nrows())
    }
}

/// Mean and covariance over the plant states only.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// GP quantities computed during a prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPrediction {
    pub weights: DVector<f64>,
    /// `mu_z^p`
    pub mean: f64,
    /// `C_z^p`
    pub var: f64,
    /// `C_z^p + sigma_r^2`
    pub var_inflated: f64,
}

/// Joint belief over `[x; GP basis values]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub state_dim: usize,
    pub step: u64,
}

impl FusedBelief {
    /// `[x0; 0]` with block-diagonal covariance `diag(C_x0, K)`.
    pub fn new(x0: DVector<f64>, cov_x0: DMatrix<f64>, gp: &GpModel) -> Result<Self> {
        let nx = x0.len();
        check_dim("initial state covariance", nx, cov_x0.nrows())?;
        check_dim("initial state covariance", nx, cov_x0.ncols())?;
        let m = gp.basis_count();
        let mut mean = DVector::zeros(nx + m);
        mean.rows_mut(0, nx).copy_from(&x0);
        let mut cov = DMatrix::zeros(nx + m, nx + m);
        cov.view_mut((0, 0), (nx, nx)).copy_from(&cov_x0);
        cov.view_mut((nx, nx), (m, m)).copy_from(&gp.pre.gram);
        Ok(Self {
            mean,
            cov,
            state_dim: nx,
            step: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn basis_count(&self) -> usize {
        self.dim() - self.state_dim
    }

    pub fn state_mean(&self) -> DVector<f64> {
        self.mean.rows(0, self.state_dim).into_owned()
    }

    pub fn gp_mean(&self) -> DVector<f64> {
        self.mean.rows(self.state_dim, self.basis_count()).into_owned()
    }

    pub fn state_cov(&self) -> DMatrix<f64> {
        let n = self.state_dim;
        self.cov.view((0, 0), (n, n)).into_owned()
    }

    pub fn gp_cov(&self) -> DMatrix<f64> {
        let (n, m) = (self.state_dim, self.basis_count());
        self.cov.view((n, n), (m, m)).into_owned()
    }

    /// State/GP block `C_xz` (`n_x x m`).
    pub fn cross_cov(&self) -> DMatrix<f64> {
        let (n, m) = (self.state_dim, self.basis_count());
        self.cov.view((0, n), (n, m)).into_owned()
    }

    pub fn zero_cross_cov(&mut self) {
        let (n, m) = (self.state_dim, self.basis_count());
        self.cov.view_mut((0, n), (n, m)).fill(0.0);
        self.cov.view_mut((n, 0), (m, n)).fill(0.0);
    }

    pub fn state_belief(&self) -> StateBelief {
        StateBelief {
            mean: self.state_mean(),
            cov: self.state_cov(),
        }
    }

    /// GP block as a stand-alone RGP state.
    pub fn gp_state(&self) -> RgpState {
        RgpState {
            mean: self.gp_mean(),
            cov: self.gp_cov(),
            step: self.step,
        }
    }
}

fn check_finite_matrix(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Standard Kalman correction `mean + G nu`, `cov - G H cov` with the gain
/// obtained from a Cholesky solve of the innovation covariance.
fn kalman_correct(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    h: &DMatrix<f64>,
    innovation: &DVector<f64>,
    r: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let hc = h * cov;
    let s = &hc * h.transpose() + r;
    let chol = s.cholesky().ok_or(Error::Singular("innovation covariance"))?;
    // G^T = S^-1 H C
    let gain_t = chol.solve(&hc);
    let mean = mean + gain_t.tr_mul(innovation);
    let mut cov = cov - gain_t.tr_mul(&hc);
    symmetrize(&mut cov);
    Ok((mean, cov))
}

/// Prediction with a frozen GP entering as a noisy input.
pub fn pure_predict<M: PlantModel + ?Sized>(
    belief: &StateBelief,
    gp_state: &RgpState,
    gp: &GpModel,
    model: &M,
    u: &DVector<f64>,
    zeta: &[f64],
    noise: &EkfNoise,
) -> Result<(StateBelief, GpPrediction)> {
    noise.check_against(model)?;
    check_dim("state mean", model.state_dim(), belief.mean.len())?;
    let inf = gp.infer(gp_state, zeta)?;
    let a = model.state_jacobian(&belief.mean, u, inf.mean);
    let e = model.disturbance_gain(&belief.mean, u, inf.mean);
    check_finite_matrix(&a, "state Jacobian")?;
    let var_inflated = inf.var + noise.residual_var();

    let mean = model.transition(&belief.mean, u, inf.mean);
    let mut cov = &a * &belief.cov * a.transpose() + &noise.process_cov + &e * e.transpose() * var_inflated;
    symmetrize(&mut cov);
    Ok((
        StateBelief { mean, cov },
        GpPrediction {
            weights: inf.weights,
            mean: inf.mean,
            var: inf.var,
            var_inflated,
        },
    ))
}

/// Standard EKF correction; returns the corrected belief and the innovation.
pub fn pure_update<M: PlantModel + ?Sized>(
    pred: &StateBelief,
    y: &DVector<f64>,
    model: &M,
    noise: &EkfNoise,
) -> Result<(StateBelief, DVector<f64>)> {
    check_dim("measurement", model.output_dim(), y.len())?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measurement"));
    }
    let h = model.output_jacobian(&pred.mean);
    let innovation = y - model.output(&pred.mean);
    let (mean, cov) = kalman_correct(&pred.mean, &pred.cov, &h, &innovation, &noise.measurement_cov)?;
    Ok((StateBelief { mean, cov }, innovation))
}

/// Joint prediction of plant states and GP basis values.
///
/// With `Ã = [[A, e J], [0, I]]` and `ẽ = [e; 0]`:
/// `C+ = Ã C Ãᵀ + Q + ẽ (σ_K² − J K Jᵀ + σ_r²) ẽᵀ`, `Q = diag(Q_x, σ_p² I)`.
pub fn fused_predict<M: PlantModel + ?Sized>(
    belief: &FusedBelief,
    gp: &GpModel,
    model: &M,
    u: &DVector<f64>,
    zeta: &[f64],
    noise: &EkfNoise,
    gp_process_std: f64,
) -> Result<(FusedBelief, GpPrediction)> {
    noise.check_against(model)?;
    let nx = model.state_dim();
    let m = gp.basis_count();
    check_dim("fused belief", nx + m, belief.dim())?;
    check_dim("fused belief state block", nx, belief.state_dim)?;

    let mu_x = belief.state_mean();
    let mu_z = belief.gp_mean();
    let weights = gp.weights(zeta)?;
    let gp_mean = weights.dot(&mu_z);

    let a = model.state_jacobian(&mu_x, u, gp_mean);
    let e = model.disturbance_gain(&mu_x, u, gp_mean);
    check_finite_matrix(&a, "state Jacobian")?;
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("disturbance gain"));
    }

    let gp_cov = belief.gp_cov();
    let cross = belief.cross_cov();
    let ej = &e * weights.transpose();
    // C_z^p = σ_K² + J (C_z − K) Jᵀ; the blockwise form below equals
    // Ã C Ãᵀ + ẽ(σ_K² − J K Jᵀ + σ_r²)ẽᵀ without cancelling J C_z Jᵀ
    // against J K Jᵀ.
    let var = gp.spec.signal_var() + (weights.transpose() * (&gp_cov - &gp.pre.gram) * &weights)[(0, 0)];
    let var_inflated = var + noise.residual_var();

    let a_cross = &a * &cross;
    let mut cov_xx = &a * belief.state_cov() * a.transpose() + &noise.process_cov + &e * e.transpose() * var_inflated;
    let mixed = &a_cross * ej.transpose();
    cov_xx += &mixed + mixed.transpose();
    let cov_xz = a_cross + &ej * &gp_cov;

    let n = nx + m;
    let mut cov = DMatrix::zeros(n, n);
    cov.view_mut((0, 0), (nx, nx)).copy_from(&cov_xx);
    cov.view_mut((0, nx), (nx, m)).copy_from(&cov_xz);
    cov.view_mut((nx, 0), (m, nx)).copy_from(&cov_xz.transpose());
    cov.view_mut((nx, nx), (m, m)).copy_from(&gp_cov);
    let q = gp_process_std * gp_process_std;
    if q > 0.0 {
        for i in nx..n {
            cov[(i, i)] += q;
        }
    }
    symmetrize(&mut cov);

    let mut mean = belief.mean.clone();
    mean.rows_mut(0, nx).copy_from(&model.transition(&mu_x, u, gp_mean));

    Ok((
        FusedBelief {
            mean,
            cov,
            state_dim: nx,
            step: belief.step,
        },
        GpPrediction {
            weights,
            mean: gp_mean,
            var,
            var_inflated,
        },
    ))
}

fn fused_innovation<M: PlantModel + ?Sized>(
    pred: &FusedBelief,
    y: &DVector<f64>,
    model: &M,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_dim("measurement", model.output_dim(), y.len())?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measurement"));
    }
    let mu_x = pred.state_mean();
    let h = model.output_jacobian(&mu_x);
    check_dim("output Jacobian columns", pred.state_dim, h.ncols())?;
    Ok((y - model.output(&mu_x), h))
}

/// Joint correction of states and GP (`H̃ = [H, 0]`).
pub fn fused_update_train<M: PlantModel + ?Sized>(
    pred: &FusedBelief,
    y: &DVector<f64>,
    model: &M,
    noise: &EkfNoise,
) -> Result<(FusedBelief, DVector<f64>)> {
    let (innovation, h) = fused_innovation(pred, y, model)?;
    let mut h_ext = DMatrix::zeros(h.nrows(), pred.dim());
    h_ext.view_mut((0, 0), (h.nrows(), pred.state_dim)).copy_from(&h);
    let (mean, cov) = kalman_correct(&pred.mean, &pred.cov, &h_ext, &innovation, &noise.measurement_cov)?;
    Ok((
        FusedBelief {
            mean,
            cov,
            state_dim: pred.state_dim,
            step: pred.step + 1,
        },
        innovation,
    ))
}

/// State-only correction: the gain is computed from the state block alone and
/// its GP rows are zero, so the GP mean and GP/GP covariance are untouched.
///
/// The cross-covariance becomes `(I − G H) C_xz`, which is what the zero-gain
/// GP rows imply and keeps the joint covariance positive semidefinite.
pub fn fused_update_state_only<M: PlantModel + ?Sized>(
    pred: &FusedBelief,
    y: &DVector<f64>,
    model: &M,
    noise: &EkfNoise,
) -> Result<(FusedBelief, DVector<f64>)> {
    let (innovation, h) = fused_innovation(pred, y, model)?;
    let nx = pred.state_dim;
    let m = pred.basis_count();
    let cx = pred.state_cov();
    let hc = &h * &cx;
    let s = &hc * h.transpose() + &noise.measurement_cov;
    let chol = s.cholesky().ok_or(Error::Singular("innovation covariance"))?;
    let gain = chol.solve(&hc).transpose();

    let mut mean = pred.mean.clone();
    {
        let mut mx = mean.rows_mut(0, nx);
        mx += &gain * &innovation;
    }

    let mut cov = pred.cov.clone();
    let reduce = DMatrix::identity(nx, nx) - &gain * &h;
    let new_xx = &cx - &gain * &hc;
    let new_xz = &reduce * pred.cross_cov();
    cov.view_mut((0, 0), (nx, nx)).copy_from(&new_xx);
    cov.view_mut((0, nx), (nx, m)).copy_from(&new_xz);
    cov.view_mut((nx, 0), (m, nx)).copy_from(&new_xz.transpose());
    symmetrize(&mut cov);

    Ok((
        FusedBelief {
            mean,
            cov,
            state_dim: nx,
            step: pred.step + 1,
        },
        innovation,
    ))
}

/// Per-step log of a filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub state_mean: Vec<f64>,
    pub state_var: Vec<f64>,
    /// `mu_z^p` at the step's GP input, before this step's correction.
    pub gp_mean: f64,
    /// `C_z^p`
    pub gp_var: f64,
    /// `C_z^p + sigma_r^2`
    pub gp_var_inflated: f64,
    pub innovation: Vec<f64>,
    pub train: bool,
}

/// Joint state estimator and online GP learner.
#[derive(Debug, Clone)]
pub struct RgpDkf<M> {
    gp: Arc<GpModel>,
    model: M,
    noise: EkfNoise,
    gp_process_std: f64,
    belief: FusedBelief,
}

impl<M: PlantModel> RgpDkf<M> {
    pub fn new(
        gp: Arc<GpModel>,
        model: M,
        noise: EkfNoise,
        gp_process_std: f64,
        x0: DVector<f64>,
        cov_x0: DMatrix<f64>,
    ) -> Result<Self> {
        noise.validate()?;
        noise.check_against(&model)?;
        if !(gp_process_std.is_finite() && gp_process_std >= 0.0) {
            return Err(invalid("sigma_p", format!("must be >= 0, got {gp_process_std}")));
        }
        check_dim("initial state", model.state_dim(), x0.len())?;
        let belief = FusedBelief::new(x0, cov_x0, &gp)?;
        Ok(Self {
            gp,
            model,
            noise,
            gp_process_std,
            belief,
        })
    }

    pub fn belief(&self) -> &FusedBelief {
        &self.belief
    }

    pub fn set_belief(&mut self, belief: FusedBelief) -> Result<()> {
        check_dim("fused belief", self.belief.dim(), belief.dim())?;
        self.belief = belief;
        Ok(())
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn gp(&self) -> &Arc<GpModel> {
        &self.gp
    }

    /// Prediction only, without committing it.
    pub fn predict(&self, u: &DVector<f64>, zeta: &[f64]) -> Result<(FusedBelief, GpPrediction)> {
        fused_predict(&self.belief, &self.gp, &self.model, u, zeta, &self.noise, self.gp_process_std)
    }

    /// One filter cycle: predict with `(u, zeta)`, then correct with `y`;
    /// jointly when `train`, state-only otherwise.
    pub fn step(&mut self, u: &DVector<f64>, zeta: &[f64], y: &DVector<f64>, train: bool) -> Result<StepLog> {
        let (pred, gp_pred) = self.predict(u, zeta)?;
        let (next, innovation) = if train {
            fused_update_train(&pred, y, &self.model, &self.noise)?
        } else {
            fused_update_state_only(&pred, y, &self.model, &self.noise)?
        };
        self.belief = next;
        let nx = self.belief.state_dim;
        Ok(StepLog {
            step: self.belief.step,
            state_mean: self.belief.mean.rows(0, nx).iter().copied().collect(),
            state_var: (0..nx).map(|i| self.belief.cov[(i, i)]).collect(),
            gp_mean: gp_pred.mean,
            gp_var: gp_pred.var,
            gp_var_inflated: gp_pred.var_inflated,
            innovation: innovation.iter().copied().collect(),
            train,
        })
    }
}

/// EKF using a frozen GP for the disturbance.
#[derive(Debug, Clone)]
pub struct PurePredictor<M> {
    gp: Arc<GpModel>,
    gp_state: RgpState,
    model: M,
    noise: EkfNoise,
    belief: StateBelief,
    step: u64,
}

impl<M: PlantModel> PurePredictor<M> {
    pub fn new(
        gp: Arc<GpModel>,
        gp_state: RgpState,
        model: M,
        noise: EkfNoise,
        x0: DVector<f64>,
        cov_x0: DMatrix<f64>,
    ) -> Result<Self> {
        noise.validate()?;
        noise.check_against(&model)?;
        check_dim("GP state", gp.basis_count(), gp_state.mean.len())?;
        check_dim("initial state", model.state_dim(), x0.len())?;
        Ok(Self {
            gp,
            gp_state,
            model,
            noise,
            belief: StateBelief { mean: x0, cov: cov_x0 },
            step: 0,
        })
    }

    pub fn belief(&self) -> &StateBelief {
        &self.belief
    }

    pub fn gp_state(&self) -> &RgpState {
        &self.gp_state
    }

    pub fn step(&mut self, u: &DVector<f64>, zeta: &[f64], y: &DVector<f64>) -> Result<StepLog> {
        let (pred, gp_pred) = pure_predict(&self.belief, &self.gp_state, &self.gp, &self.model, u, zeta, &self.noise)?;
        let (next, innovation) = pure_update(&pred, y, &self.model, &self.noise)?;
        self.belief = next;
        self.step += 1;
        Ok(StepLog {
            step: self.step,
            state_mean: self.belief.mean.iter().copied().collect(),
            state_var: self.belief.cov.diagonal().iter().copied().collect(),
            gp_mean: gp_pred.mean,
            gp_var: gp_pred.var,
            gp_var_inflated: gp_pred.var_inflated,
            innovation: innovation.iter().copied().collect(),
            train: false,
        })
    }
}
