//! Scoring of GP disturbance predictions.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::sim::RunRecord;

/// Root mean square error between predictions and ground truth.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_dim("rmse series", pred.len(), truth.len())?;
    if pred.is_empty() {
        return Err(invalid("rmse", "empty series"));
    }
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Mean Gaussian negative log likelihood of `truth` under `N(mean, var)`.
pub fn nll(mean: &[f64], var: &[f64], truth: &[f64]) -> Result<f64> {
    check_dim("nll variance series", mean.len(), var.len())?;
    check_dim("nll truth series", mean.len(), truth.len())?;
    if mean.is_empty() {
        return Err(invalid("nll", "empty series"));
    }
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for ((m, v), t) in mean.iter().zip(var).zip(truth) {
        if !(*v > 0.0) {
            return Err(invalid("nll", format!("non-positive variance {v}")));
        }
        total += 0.5 * (ln_2pi + v.ln()) + (t - m) * (t - m) / (2.0 * v);
    }
    Ok(total / mean.len() as f64)
}

/// Metrics of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// RMSE of `mu_z^p` against the true disturbance.
    pub rmse: f64,
    /// NLL with the `sigma_r`-inflated variance.
    pub nll: f64,
    /// Auxiliary: RMSE of the state estimate over both states.
    pub state_rmse: f64,
    pub samples: usize,
}

/// Scores a run, ignoring samples with `time < warmup`.
pub fn evaluate(rec: &RunRecord, warmup: f64) -> Result<RunMetrics> {
    let start = rec.time.iter().position(|&t| t >= warmup - 1e-9).unwrap_or(rec.len());
    let logs = &rec.logs[start..];
    let mean: Vec<f64> = logs.iter().map(|l| l.gp_mean).collect();
    let var: Vec<f64> = logs.iter().map(|l| l.gp_var_inflated).collect();
    let truth = &rec.z_true[start..];

    let mut ss = 0.0;
    for (l, x) in logs.iter().zip(&rec.x_true[start..]) {
        for (est, tru) in l.state_mean.iter().zip(x) {
            ss += (est - tru) * (est - tru);
        }
    }
    let state_rmse = if logs.is_empty() {
        f64::NAN
    } else {
        (ss / (2 * logs.len()) as f64).sqrt()
    };

    Ok(RunMetrics {
        rmse: rmse(&mean, truth)?,
        nll: nll(&mean, &var, truth)?,
        state_rmse,
        samples: logs.len(),
    })
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Spread {
        let n = values.len();
        if n == 0 {
            return Spread {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Spread { mean, std }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rmse_cases() {
        let truth = [1.0, -2.0, 3.5, 0.0];
        assert_eq!(rmse(&truth, &truth).unwrap(), 0.0);
        let shifted: Vec<f64> = truth.iter().map(|t| t - 0.7).collect();
        assert_abs_diff_eq!(rmse(&shifted, &truth).unwrap(), 0.7, epsilon = 1e-15);
        let alt: Vec<f64> = truth.iter().enumerate().map(|(i, t)| t + if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_abs_diff_eq!(rmse(&alt, &truth).unwrap(), 1.0, epsilon = 1e-15);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn nll_closed_forms() {
        let z = [0.3, -1.0, 4.0];
        let v = nll(&z, &[1.0; 3], &z).unwrap();
        assert_abs_diff_eq!(v, 0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.9189, epsilon = 1e-4);

        let s2 = 1.0 / (2.0 * std::f64::consts::PI * std::f64::consts::E);
        assert_abs_diff_eq!(nll(&z, &[s2; 3], &z).unwrap(), -0.5, epsilon = 1e-12);

        let a = nll(&z, &[0.5; 3], &z).unwrap();
        let b = nll(&z, &[2.0; 3], &z).unwrap();
        assert!(b > a);

        assert!(nll(&z, &[1.0, 0.0, 1.0], &z).is_err());
    }

    #[test]
    fn spread_of_values() {
        let s = Spread::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_abs_diff_eq!(s.std, 1.0, epsilon = 1e-15);
        assert_eq!(Spread::of(&[4.0]).std, 0.0);
    }
}
