//! Recursive GP regression on a fixed set of basis vectors.
//!
//! The GP is reduced to a Gaussian over its values at the basis points
//! (`mean`, `cov`). Each step runs an inference at one test input and, when a
//! direct measurement of the GP output is available, a Kalman-style update.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::kernel::{self, GridSpec, KernelPrecomp, KernelSpec};

/// Kernel, grid and their offline precomputation, shared read-only.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub spec: KernelSpec,
    pub grid: GridSpec,
    pub pre: KernelPrecomp,
}

impl GpModel {
    pub fn new(spec: KernelSpec, grid: GridSpec) -> Result<Arc<Self>> {
        let pre = kernel::precompute(&spec, &grid)?;
        Ok(Arc::new(Self { spec, grid, pre }))
    }

    pub fn basis_count(&self) -> usize {
        self.pre.basis_count()
    }

    /// Interpolation weights `J_k` for a physical input.
    pub fn weights(&self, zeta: &[f64]) -> Result<DVector<f64>> {
        let x = kernel::normalize(zeta, &self.grid)?;
        let rhs = self.pre.cross_kernel(&x, &self.spec);
        kernel::solve_against_gram(&rhs, &self.pre)
    }

    /// Fresh state: zero mean, prior covariance `K`.
    pub fn init_state(&self) -> RgpState {
        RgpState {
            mean: DVector::zeros(self.basis_count()),
            cov: self.pre.gram.clone(),
            step: 0,
        }
    }

    /// Predictive mean and variance at `zeta`, given basis-point mean/cov.
    pub fn infer_with(
        &self,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        zeta: &[f64],
    ) -> Result<InferenceResult> {
        let n = self.basis_count();
        check_dim("GP mean", n, mean.len())?;
        check_dim("GP covariance", n, cov.nrows())?;
        let weights = self.weights(zeta)?;
        let mean_p = weights.dot(mean);
        let delta = cov - &self.pre.gram;
        let var_p = self.spec.signal_var() + (weights.transpose() * delta * &weights)[(0, 0)];
        Ok(InferenceResult {
            weights,
            mean: mean_p,
            var: var_p,
        })
    }

    pub fn infer(&self, state: &RgpState, zeta: &[f64]) -> Result<InferenceResult> {
        self.infer_with(&state.mean, &state.cov, zeta)
    }

    /// Measurement update with a direct observation `y` of the GP output.
    pub fn update(
        &self,
        state: &RgpState,
        inf: &InferenceResult,
        y: f64,
        noise: &RgpNoise,
    ) -> Result<RgpState> {
        if !y.is_finite() {
            return Err(Error::NonFinite("GP measurement"));
        }
        let s = inf.var + noise.measurement_std * noise.measurement_std;
        if !(s > 0.0) {
            return Err(Error::Singular("GP innovation variance"));
        }
        let cj = &state.cov * &inf.weights;
        let gain = &cj / s;
        let mean = &state.mean + &gain * (y - inf.mean);
        // G J C = gain * (C J^T)^T, C symmetric
        let mut cov = &state.cov - &gain * cj.transpose();
        let q = noise.process_std * noise.process_std;
        if q > 0.0 {
            for i in 0..cov.nrows() {
                cov[(i, i)] += q;
            }
        }
        symmetrize(&mut cov);
        if let Some(bound) = noise.cov_bound {
            bound_diagonal(&mut cov, bound);
        }
        Ok(RgpState {
            mean,
            cov,
            step: state.step + 1,
        })
    }
}

/// Basis-point mean and covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgpState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RgpNoise {
    /// `sigma_p`, injected on the diagonal after each update.
    #[serde(default)]
    pub process_std: f64,
    /// `sigma_y,GP`.
    pub measurement_std: f64,
    /// Optional cap on the diagonal of the basis covariance.
    #[serde(default)]
    pub cov_bound: Option<f64>,
}

impl RgpNoise {
    pub fn new(process_std: f64, measurement_std: f64) -> Result<Self> {
        let noise = Self {
            process_std,
            measurement_std,
            cov_bound: None,
        };
        noise.validate(None)?;
        Ok(noise)
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.cov_bound = Some(bound);
        self
    }

    pub fn validate(&self, spec: Option<&KernelSpec>) -> Result<()> {
        if !(self.measurement_std.is_finite() && self.measurement_std > 0.0) {
            return Err(invalid("sigma_y_gp", format!("must be > 0, got {}", self.measurement_std)));
        }
        if !(self.process_std.is_finite() && self.process_std >= 0.0) {
            return Err(invalid("sigma_p", format!("must be >= 0, got {}", self.process_std)));
        }
        if let Some(b) = self.cov_bound {
            let floor = spec.map_or(0.0, KernelSpec::signal_var);
            if !(b.is_finite() && b > 0.0 && b >= floor) {
                return Err(invalid("cov_bound", format!("must be >= sigma_K^2 = {floor}, got {b}")));
            }
        }
        Ok(())
    }
}

/// Output of the inference step.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    /// `J_k`
    pub weights: DVector<f64>,
    /// `mu_z^p`
    pub mean: f64,
    /// `C_z^p`
    pub var: f64,
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Clips diagonal entries above `bound`, rescaling the matching row and
/// column by `sqrt(bound / diag)` so correlations are preserved.
fn bound_diagonal(cov: &mut DMatrix<f64>, bound: f64) {
    let n = cov.nrows();
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = cov[(i, i)];
            if d > bound {
                (bound / d).sqrt()
            } else {
                1.0
            }
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            cov[(i, j)] *= scale[i] * scale[j];
        }
    }
}
