//! Central-difference gradient verification (f64 only).

use crate::error::{Result, TensorError};
use crate::tensor::{no_grad, Tensor};

/// Denominator floor of the relative error, so coordinates with a vanishing
/// gradient are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }

    pub(crate) fn from_pairs(analytic: Vec<f64>, numeric: Vec<f64>, tol: f64) -> Self {
        let (worst_index, max_rel_error) = analytic
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .enumerate()
            .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
        GradCheckReport {
            analytic,
            numeric,
            max_rel_error,
            worst_index,
            tol,
        }
    }
}

/// Compares the backward gradient of scalar `f` at `x` with central
/// differences of step `h`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let leaf = x.with_requires_grad(true);
    let y = f(&leaf)?;
    if y.numel() != 1 {
        return Err(TensorError::NotScalar(y.shape().to_vec()));
    }
    let again = no_grad(|| f(&leaf))?;
    let drift = (y.item()? - again.item()?).abs();
    if drift != 0.0 {
        return Err(TensorError::NonDeterministicFunction(drift));
    }
    let analytic = match y.backward() {
        Ok(()) => leaf.grad().unwrap_or_else(|| vec![0.0; x.numel()]),
        Err(TensorError::DisconnectedGraph) => vec![0.0; x.numel()],
        Err(e) => return Err(e),
    };
    let base = x.to_vec();
    let mut numeric = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let eval = |delta: f64| -> Result<f64> {
            let mut v = base.clone();
            v[i] += delta;
            let xt = Tensor::new(v, x.shape())?;
            no_grad(|| f(&xt))?.item()
        };
        numeric.push((eval(h)? - eval(-h)?) / (2.0 * h));
    }
    Ok(GradCheckReport::from_pairs(analytic, numeric, tol))
}
