use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Mean absolute error with its subgradient.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Result<T> {
    pub value: T,
    /// `sign(pred - label) / N`, with `sign(0) = 0`.
    pub gradient: Vec<T>,
}

pub fn l1_regression_loss<T: Scalar>(predictions: &[T], labels: &[T]) -> Result<L1Result<T>> {
    if predictions.len() != labels.len() {
        return Err(invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(invalid("L1 loss needs at least one prediction"));
    }
    let inv = T::one() / T::from_usize_lossy(predictions.len());
    let mut value = T::zero();
    let gradient = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let r = p - y;
            value += r.abs();
            if r > T::zero() {
                inv
            } else if r < T::zero() {
                -inv
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(L1Result {
        value: value * inv,
        gradient,
    })
}
