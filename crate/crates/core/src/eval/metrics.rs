use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

fn paired<T>(pred: &[T], truth: &[T]) -> Result<()> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(invalid(format!(
            "need equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn mae<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T> {
    paired(pred, truth)?;
    let sum: T = pred.iter().zip(truth).map(|(&p, &t)| (p - t).abs()).sum();
    Ok(sum / T::from_usize_lossy(pred.len()))
}

/// `1 - SSE / SST`.
pub fn r_squared<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T> {
    paired(pred, truth)?;
    let n = T::from_usize_lossy(truth.len());
    let mean = truth.iter().copied().sum::<T>() / n;
    let sst: T = truth.iter().map(|&t| (t - mean).powi(2)).sum();
    if !(sst > T::zero()) {
        return Err(Error::UndefinedMetric(
            "R^2 with zero variance in the targets".into(),
        ));
    }
    let sse: T = pred.iter().zip(truth).map(|(&p, &t)| (p - t).powi(2)).sum();
    Ok(T::one() - sse / sst)
}

/// Composite of site predictability and external error; lower is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChallengeScore {
    pub value: f64,
    /// Set when the balanced accuracy was exactly zero.
    pub degenerate: bool,
}

/// `bacc^0.3 * mae_ext`, with `bacc` as a fraction in `[0, 1]`.
pub fn challenge_score(bacc: f64, mae_ext: f64) -> Result<ChallengeScore> {
    if !(0.0..=1.0).contains(&bacc) {
        return Err(invalid(format!(
            "balanced accuracy must be a fraction in [0, 1], got {bacc}"
        )));
    }
    if !(mae_ext >= 0.0 && mae_ext.is_finite()) {
        return Err(invalid(format!(
            "external MAE must be non-negative, got {mae_ext}"
        )));
    }
    if bacc == 0.0 {
        return Ok(ChallengeScore {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(ChallengeScore {
        value: bacc.powf(0.3) * mae_ext,
        degenerate: false,
    })
}

/// Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    paired(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::UndefinedMetric(
            "correlation with zero variance".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    paired(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::UndefinedMetric(
            "slope with zero variance in x".into(),
        ));
    }
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeAccuracyCorrelation {
    pub r: f64,
    pub slope: f64,
}

/// Correlation and slope of downstream accuracy against `-MAE`, so a positive
/// `r` means lower age error goes with higher accuracy.
pub fn mae_accuracy_correlation(runs: &[(f64, f64)]) -> Result<MaeAccuracyCorrelation> {
    if runs.len() < 3 {
        return Err(invalid(format!("need at least 3 runs, got {}", runs.len())));
    }
    let x: Vec<f64> = runs.iter().map(|r| -r.0).collect();
    let y: Vec<f64> = runs.iter().map(|r| r.1).collect();
    Ok(MaeAccuracyCorrelation {
        r: pearson(&x, &y)?,
        slope: ols_slope(&x, &y)?,
    })
}
