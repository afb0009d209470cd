//! Squared-exponential kernel on a normalized basis-vector grid.
//!
//! Basis vectors sit on the integer lattice `{0..N_1-1} x ... x {0..N_n-1}`,
//! so a single length scale is meaningful for every input once the physical
//! inputs are mapped onto the lattice with [`normalize`]. Solves against the
//! Gram matrix go through a QR factorization computed once; the explicit
//! inverse is kept only as a reference path for comparison.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};

/// Hyperparameters of the SE kernel.
///
/// `length_scale` enters the exponent as `2L` (not `2L^2`) and is expressed in
/// normalized grid units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(default = "one")]
    pub length_scale: f64,
    #[serde(default = "one")]
    pub signal_std: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            length_scale: 1.0,
            signal_std: 1.0,
        }
    }
}

impl KernelSpec {
    pub fn new(length_scale: f64, signal_std: f64) -> Result<Self> {
        let spec = Self {
            length_scale,
            signal_std,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale.is_finite() && self.length_scale > 0.0) {
            return Err(invalid("length_scale", format!("must be > 0, got {}", self.length_scale)));
        }
        if !(self.signal_std.is_finite() && self.signal_std > 0.0) {
            return Err(invalid("signal_std", format!("must be > 0, got {}", self.signal_std)));
        }
        Ok(())
    }

    /// `sigma_K^2`, the prior variance at any input.
    pub fn signal_var(&self) -> f64 {
        self.signal_std * self.signal_std
    }
}

/// Equidistant basis-vector grid and the physical input box it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Basis points per input dimension.
    pub counts: Vec<usize>,
    /// Physical lower bound per input dimension.
    pub lower: Vec<f64>,
    /// Physical upper bound per input dimension.
    pub upper: Vec<f64>,
}

impl GridSpec {
    pub fn new(counts: Vec<usize>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let grid = Self {
            counts,
            lower,
            upper,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// One-dimensional grid with `count` points over `[lower, upper]`.
    pub fn uniform_1d(count: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![count], vec![lower], vec![upper])
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.is_empty() {
            return Err(invalid("grid.counts", "at least one input dimension required"));
        }
        check_dim("grid.lower", self.counts.len(), self.lower.len())?;
        check_dim("grid.upper", self.counts.len(), self.upper.len())?;
        for (i, &n) in self.counts.iter().enumerate() {
            if n < 2 {
                return Err(invalid("grid.counts", format!("dimension {i} has {n} points, need >= 2")));
            }
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid("grid.bounds", format!("dimension {i}: need finite lower < upper, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.counts.len()
    }

    pub fn basis_count(&self) -> usize {
        self.counts.iter().product()
    }

    /// Physical input corresponding to a normalized lattice coordinate.
    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| self.lower[i] + xi * (self.upper[i] - self.lower[i]) / (self.counts[i] - 1) as f64)
            .collect()
    }
}

/// `k(x, x2) = sigma_K^2 * exp(-|x - x2|^2 / (2L))` on normalized inputs.
pub fn se_kernel(x: &[f64], x2: &[f64], spec: &KernelSpec) -> f64 {
    debug_assert_eq!(x.len(), x2.len());
    let sq: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    spec.signal_var() * (-sq / (2.0 * spec.length_scale)).exp()
}

/// All lattice vertices, one per row, with dimension 1 varying fastest.
pub fn build_grid(grid: &GridSpec) -> DMatrix<f64> {
    let n_x = grid.input_dim();
    let total = grid.basis_count();
    let mut basis = DMatrix::zeros(total, n_x);
    for row in 0..total {
        let mut rem = row;
        for (dim, &n) in grid.counts.iter().enumerate() {
            basis[(row, dim)] = (rem % n) as f64;
            rem /= n;
        }
    }
    basis
}

/// Affine map from physical inputs onto lattice coordinates.
///
/// Inputs outside the grid bounds are extrapolated with the same map.
pub fn normalize(zeta: &[f64], grid: &GridSpec) -> Result<Vec<f64>> {
    check_dim("normalize input", grid.input_dim(), zeta.len())?;
    if zeta.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("GP input"));
    }
    Ok(zeta
        .iter()
        .enumerate()
        .map(|(i, &z)| (z - grid.lower[i]) * (grid.counts[i] - 1) as f64 / (grid.upper[i] - grid.lower[i]))
        .collect())
}

/// Offline quantities: Gram matrix, its QR factors, and the basis.
#[derive(Debug, Clone)]
pub struct KernelPrecomp {
    pub gram: DMatrix<f64>,
    pub qr_q: DMatrix<f64>,
    pub qr_r: DMatrix<f64>,
    pub basis: DMatrix<f64>,
}

pub fn precompute(spec: &KernelSpec, grid: &GridSpec) -> Result<KernelPrecomp> {
    spec.validate()?;
    grid.validate()?;
    let basis = build_grid(grid);
    let n = basis.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| basis.row(i).iter().copied().collect()).collect();
    let gram = DMatrix::from_fn(n, n, |i, j| se_kernel(&rows[i], &rows[j], spec));

    let qr = gram.clone().qr();
    let qr_q = qr.q();
    let qr_r = qr.r();

    let diag = qr_r.diagonal().map(f64::abs);
    let (rmin, rmax) = (diag.min(), diag.max());
    let ratio = rmin / rmax;
    if !(ratio > f64::EPSILON * n as f64) {
        return Err(Error::SingularGram { ratio });
    }

    Ok(KernelPrecomp {
        gram,
        qr_q,
        qr_r,
        basis,
    })
}

impl KernelPrecomp {
    pub fn basis_count(&self) -> usize {
        self.basis.nrows()
    }

    /// Cross-kernel row `k(x, X)` for a normalized test input, as a column.
    pub fn cross_kernel(&self, x_norm: &[f64], spec: &KernelSpec) -> DVector<f64> {
        DVector::from_iterator(
            self.basis_count(),
            self.basis
                .row_iter()
                .map(|b| se_kernel(x_norm, b.clone_owned().as_slice(), spec)),
        )
    }

    /// `J K J^T`, the prior variance explained by the basis.
    pub fn explained_variance(&self, weights: &DVector<f64>) -> f64 {
        (weights.transpose() * &self.gram * weights)[(0, 0)]
    }

    /// Explicit inverse of the Gram matrix, for the reference path only.
    pub fn explicit_inverse(&self) -> Result<DMatrix<f64>> {
        self.gram
            .clone()
            .try_inverse()
            .ok_or(Error::Singular("Gram matrix inversion"))
    }
}

/// Solves `J K = rhs` for the row vector `J` (both stored as columns).
///
/// Uses `K = QR` and the symmetry of `K`: `J R^T = rhs Q`, i.e. the upper
/// triangular system `R J^T = Q^T rhs^T`.
pub fn solve_against_gram(rhs: &DVector<f64>, pre: &KernelPrecomp) -> Result<DVector<f64>> {
    check_dim("solve_against_gram rhs", pre.basis_count(), rhs.len())?;
    let projected = pre.qr_q.tr_mul(rhs);
    pre.qr_r
        .solve_upper_triangular(&projected)
        .ok_or(Error::Singular("zero diagonal in R"))
}

/// `J = rhs K^{-1}` with a precomputed inverse. Numerically inferior to
/// [`solve_against_gram`] when `K` is close to singular.
pub fn solve_with_inverse(rhs: &DVector<f64>, inverse: &DMatrix<f64>) -> DVector<f64> {
    inverse.tr_mul(rhs)
}

/// `||J K - rhs||_inf / ||rhs||_inf` (absolute when `rhs` is zero).
pub fn relative_residual(weights: &DVector<f64>, rhs: &DVector<f64>, gram: &DMatrix<f64>) -> f64 {
    let resid = gram.tr_mul(weights) - rhs;
    let scale = rhs.amax();
    if scale > 0.0 {
        resid.amax() / scale
    } else {
        resid.amax()
    }
}
