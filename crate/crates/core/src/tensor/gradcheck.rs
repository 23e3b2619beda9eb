//! Central finite-difference verification of tape gradients (F64 only).

use super::{no_grad, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_err: f64,
    /// (parameter index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn scalar_of(t: &Tensor<f64>) -> Result<f64> {
    if t.numel() != 1 {
        return Err(Error::NonScalarLoss(t.shape().to_vec()));
    }
    Ok(t.item())
}

/// Checks gradients of the scalar `f(x)` with respect to `x`, returning the
/// maximum relative error. NaN anywhere yields NaN, which fails any
/// tolerance comparison.
pub fn grad_check(
    f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    x: &Tensor<f64>,
    h: f64,
) -> Result<f64> {
    let x = Tensor::param(x.to_vec(), x.shape())?;
    let report = grad_check_params(|| f(&x), std::slice::from_ref(&x), h)?;
    Ok(report.max_rel_err)
}

/// Checks gradients of the closure's scalar output with respect to every
/// leaf in `params`. Leaves are perturbed in place and restored.
pub fn grad_check_params(
    f: impl Fn() -> Result<Tensor<f64>>,
    params: &[Tensor<f64>],
    h: f64,
) -> Result<GradCheckReport> {
    for p in params {
        p.zero_grad();
    }
    let loss = f()?;
    scalar_of(&loss)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    drop(loss);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        for i in 0..p.numel() {
            let orig = p.data()[i];
            p.update_data(|d| d[i] = orig + h);
            let plus = no_grad(|| f().and_then(|t| scalar_of(&t)));
            p.update_data(|d| d[i] = orig - h);
            let minus = no_grad(|| f().and_then(|t| scalar_of(&t)));
            p.update_data(|d| d[i] = orig);
            let numeric = (plus? - minus?) / (2.0 * h);
            let err = rel_err(analytic[pi][i], numeric);
            report.coordinates += 1;
            if err.is_nan() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (pi, i);
                if err.is_nan() {
                    return Ok(report);
                }
            }
        }
        p.zero_grad();
    }
    Ok(report)
}
