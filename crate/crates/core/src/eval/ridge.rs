use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, solve, Matrix};
use crate::scalar::Scalar;

pub const DEFAULT_RIDGE_LAMBDA: f64 = 1.0;

/// Linear age readout from frozen representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeReadout<T> {
    pub weights: Vec<T>,
    pub intercept: T,
    pub lambda: T,
}

/// Minimizes `sum (y - w.x - b)^2 + lambda |w|^2` with an unpenalized intercept.
pub fn fit_ridge_readout<T: Scalar>(x: &Matrix<T>, y: &[T], lambda: T) -> Result<RidgeReadout<T>> {
    let n = x.rows();
    let d = x.cols();
    if n == 0 || y.len() != n {
        return Err(invalid(format!(
            "ridge needs matching non-empty inputs, got {n} rows and {} targets",
            y.len()
        )));
    }
    if !(lambda >= T::zero() && lambda.is_finite()) {
        return Err(invalid("ridge lambda must be non-negative"));
    }
    let nf = T::from_usize_lossy(n);
    let x_mean: Vec<T> = (0..d)
        .map(|j| (0..n).map(|i| x[(i, j)]).sum::<T>() / nf)
        .collect();
    let y_mean = y.iter().copied().sum::<T>() / nf;
    let mut xc = x.clone();
    for i in 0..n {
        for (v, &m) in xc.row_mut(i).iter_mut().zip(&x_mean) {
            *v -= m;
        }
    }
    let yc: Vec<T> = y.iter().map(|&v| v - y_mean).collect();
    let mut gram = xc.t_matmul(&xc)?;
    for j in 0..d {
        gram[(j, j)] += lambda;
    }
    let rhs: Vec<T> = (0..d)
        .map(|j| (0..n).map(|i| xc[(i, j)] * yc[i]).sum())
        .collect();
    let weights = solve(&gram, &rhs).map_err(|e| match e {
        Error::IllConditioned(msg) if lambda == T::zero() => {
            Error::IllConditioned(format!("{msg}; use lambda > 0"))
        }
        other => other,
    })?;
    let intercept = y_mean - dot(&weights, &x_mean);
    Ok(RidgeReadout {
        weights,
        intercept,
        lambda,
    })
}

impl<T: Scalar> RidgeReadout<T> {
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        if x.cols() != self.weights.len() {
            return Err(invalid(format!(
                "readout expects {} columns, got {}",
                self.weights.len(),
                x.cols()
            )));
        }
        Ok(x.row_iter()
            .map(|r| dot(r, &self.weights) + self.intercept)
            .collect())
    }
}

pub fn predict_age<T: Scalar>(readout: &RidgeReadout<T>, x: &Matrix<T>) -> Result<Vec<T>> {
    readout.predict(x)
}
