//! Central finite-difference checks of the analytic loss gradients.

use super::{contrastive_loss, l1_regression_loss, LossConfig, LossKind};
use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::similarity::{normalize_rows, normalize_rows_backward, normalize_rows_with_norms};

fn check_step(h: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(invalid(format!(
            "finite-difference step {h} outside [1e-7, 1e-3]"
        )));
    }
    Ok(())
}

#[inline]
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Max relative error between the analytic gradient of a loss with respect to
/// the raw (pre-normalization) rows and a central finite difference.
///
/// For [`LossKind::L1Baseline`] the first column of `raw` is taken as the predictions.
pub fn loss_gradient_check(
    raw: &Matrix<f64>,
    labels: &[f64],
    cfg: &LossConfig<f64>,
    h: f64,
) -> Result<f64> {
    check_step(h)?;
    if cfg.kind == LossKind::L1Baseline {
        let preds: Vec<f64> = raw.row_iter().map(|r| r[0]).collect();
        return l1_gradient_check(&preds, labels, h);
    }
    let (emb, norms) = normalize_rows_with_norms(raw)?;
    let res = contrastive_loss(&emb, labels, cfg)?;
    let analytic = normalize_rows_backward(&emb, &norms, &res.gradient);

    let eval = |x: &Matrix<f64>| -> Result<f64> {
        Ok(contrastive_loss(&normalize_rows(x)?, labels, cfg)?.value)
    };
    let mut worst = 0.0f64;
    let mut probe = raw.clone();
    for idx in 0..raw.as_slice().len() {
        let orig = probe.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + h;
        let fp = eval(&probe)?;
        probe.as_mut_slice()[idx] = orig - h;
        let fm = eval(&probe)?;
        probe.as_mut_slice()[idx] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        worst = worst.max(rel_err(analytic.as_slice()[idx], numeric));
    }
    Ok(worst)
}

/// Same measure for the L1 loss with respect to the predictions.
pub fn l1_gradient_check(predictions: &[f64], labels: &[f64], h: f64) -> Result<f64> {
    check_step(h)?;
    let analytic = l1_regression_loss(predictions, labels)?.gradient;
    let mut probe = predictions.to_vec();
    let mut worst = 0.0f64;
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = l1_regression_loss(&probe, labels)?.value;
        probe[i] = orig - h;
        let fm = l1_regression_loss(&probe, labels)?.value;
        probe[i] = orig;
        worst = worst.max(rel_err(analytic[i], (fp - fm) / (2.0 * h)));
    }
    Ok(worst)
}
