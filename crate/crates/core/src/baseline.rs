//! Baseline learner: reconstruct the disturbance from two consecutive
//! full-state measurements by inverting the linear difference equation, then
//! train a stand-alone RGP on the reconstruction.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Error, Result};
use crate::fusion::StepLog;
use crate::rgp::{GpModel, RgpNoise, RgpState};

/// `x+ = A x + B u + e z`, with `e != 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DVector<f64>,
    pub sample_time: f64,
    pinv: DVector<f64>,
}

impl LinearPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, e: DVector<f64>, sample_time: f64) -> Result<Self> {
        let n = a.nrows();
        check_dim("A columns", n, a.ncols())?;
        check_dim("B rows", n, b.nrows())?;
        check_dim("e length", n, e.len())?;
        let norm_sq = e.norm_squared();
        if !(norm_sq > 0.0 && norm_sq.is_finite()) {
            return Err(invalid("e", "disturbance gain must be non-zero"));
        }
        Ok(Self {
            pinv: &e / norm_sq,
            a,
            b,
            e,
            sample_time,
        })
    }

    /// `e+ = (eᵀe)⁻¹ eᵀ`, stored as a column.
    pub fn pseudo_inverse(&self) -> &DVector<f64> {
        &self.pinv
    }

    /// `y_GP = e+ (x_next − (A x + B u))`.
    pub fn disturbance_measurement(&self, x_next: &DVector<f64>, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        check_dim("x_next", self.a.nrows(), x_next.len())?;
        check_dim("x", self.a.nrows(), x.len())?;
        check_dim("u", self.b.ncols(), u.len())?;
        let residual = x_next - (&self.a * x + &self.b * u);
        let y = self.pinv.dot(&residual);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NonFinite("disturbance reconstruction"))
        }
    }
}

/// One baseline step: reconstruct, infer at `zeta`, update.
pub fn rgpb_step(
    gp: &GpModel,
    state: &RgpState,
    plant: &LinearPlant,
    zeta: &[f64],
    x: &DVector<f64>,
    x_next: &DVector<f64>,
    u: &DVector<f64>,
    noise: &RgpNoise,
) -> Result<(RgpState, f64, crate::rgp::InferenceResult)> {
    let y_gp = plant.disturbance_measurement(x_next, x, u)?;
    let inf = gp.infer(state, zeta)?;
    let next = gp.update(state, &inf, y_gp, noise)?;
    Ok((next, y_gp, inf))
}

/// Running baseline learner fed with measured state pairs.
#[derive(Debug, Clone)]
pub struct RgpB {
    gp: Arc<GpModel>,
    plant: LinearPlant,
    noise: RgpNoise,
    residual_std: f64,
    state: RgpState,
}

impl RgpB {
    /// `noise.measurement_std` is the tuned design value of `sigma_y,GP`;
    /// `residual_std` only inflates the logged prediction variance.
    pub fn new(gp: Arc<GpModel>, plant: LinearPlant, noise: RgpNoise, residual_std: f64) -> Result<Self> {
        noise.validate(Some(&gp.spec))?;
        let state = gp.init_state();
        Ok(Self {
            gp,
            plant,
            noise,
            residual_std,
            state,
        })
    }

    pub fn state(&self) -> &RgpState {
        &self.state
    }

    /// Uses the measurement pair `(x, x_next)` around the input `u` applied at
    /// the step where the GP input was `zeta`.
    pub fn step(&mut self, zeta: &[f64], x: &DVector<f64>, x_next: &DVector<f64>, u: &DVector<f64>) -> Result<StepLog> {
        let (next, y_gp, inf) = rgpb_step(&self.gp, &self.state, &self.plant, zeta, x, x_next, u, &self.noise)?;
        self.state = next;
        Ok(StepLog {
            step: self.state.step,
            state_mean: x_next.iter().copied().collect(),
            state_var: vec![f64::NAN; x_next.len()],
            gp_mean: inf.mean,
            gp_var: inf.var,
            gp_var_inflated: inf.var + self.residual_std * self.residual_std,
            innovation: vec![y_gp - inf.mean],
            train: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{GridSpec, KernelSpec};
    use approx::assert_abs_diff_eq;

    fn plant() -> LinearPlant {
        let t = 0.01;
        LinearPlant::new(
            DMatrix::from_row_slice(2, 2, &[1.0, t, -4.0 * t, 1.0 - 4.0 * t]),
            DMatrix::from_row_slice(2, 1, &[0.0, t]),
            DVector::from_vec(vec![0.0, t]),
            t,
        )
        .unwrap()
    }

    #[test]
    fn exact_inversion() {
        let p = plant();
        let x = DVector::from_vec(vec![0.4, -1.2]);
        let u = DVector::from_vec(vec![0.7]);
        for z in [-21.0, -10.0, 1.0, 3.3] {
            let x_next = &p.a * &x + &p.b * &u + &p.e * z;
            let y = p.disturbance_measurement(&x_next, &x, &u).unwrap();
            assert_abs_diff_eq!(y, z, epsilon = 1e-12);
        }
    }

    #[test]
    fn unit_channel_pseudo_inverse() {
        let p = LinearPlant::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DVector::from_vec(vec![0.0, 1.0]),
            1.0,
        )
        .unwrap();
        assert_eq!(p.pseudo_inverse().as_slice(), &[0.0, 1.0]);
        let y = p
            .disturbance_measurement(&DVector::from_vec(vec![5.0, -2.5]), &DVector::zeros(2), &DVector::zeros(1))
            .unwrap();
        assert_eq!(y, -2.5);
    }

    #[test]
    fn zero_gain_rejected() {
        assert!(LinearPlant::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), DVector::zeros(2), 1.0).is_err());
    }

    #[test]
    fn step_is_composition() {
        let gp = GpModel::new(KernelSpec::new(1.0, 10.0).unwrap(), GridSpec::uniform_1d(5, -1.0, 1.0).unwrap()).unwrap();
        let p = plant();
        let noise = RgpNoise::new(0.0, 2.0).unwrap();
        let mut b = RgpB::new(gp.clone(), p.clone(), noise, 0.5).unwrap();
        let x = DVector::from_vec(vec![0.1, 0.2]);
        let xn = DVector::from_vec(vec![0.1, 0.1]);
        let u = DVector::from_vec(vec![0.3]);
        let log = b.step(&[0.25], &x, &xn, &u).unwrap();

        let s0 = gp.init_state();
        let y = p.disturbance_measurement(&xn, &x, &u).unwrap();
        let inf = gp.infer(&s0, &[0.25]).unwrap();
        let manual = gp.update(&s0, &inf, y, &noise).unwrap();
        assert_eq!(b.state(), &manual);
        assert_eq!(log.gp_mean, inf.mean);
        assert_abs_diff_eq!(log.gp_var_inflated, inf.var + 0.25, epsilon = 1e-12);
    }

    #[test]
    fn huge_design_noise_freezes_gp() {
        let gp = GpModel::new(KernelSpec::new(1.0, 10.0).unwrap(), GridSpec::uniform_1d(5, -1.0, 1.0).unwrap()).unwrap();
        let mut b = RgpB::new(gp.clone(), plant(), RgpNoise::new(0.0, 1e12).unwrap(), 0.0).unwrap();
        let x = DVector::from_vec(vec![0.1, 0.2]);
        for k in 0..50 {
            b.step(&[0.02 * k as f64 - 0.5], &x, &x, &DVector::zeros(1)).unwrap();
        }
        assert!(b.state().mean.amax() < 1e-8);
        assert!((&b.state().cov - &gp.pre.gram).amax() < 1e-8);
    }
}
