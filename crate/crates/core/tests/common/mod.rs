//! Reference implementations used as oracles by the integration tests.
//!
//! Everything here is written from the loss and metric definitions with plain
//! nested loops and direct sums (no log-sum-exp, no shared helpers from the
//! library), so agreement with the library is meaningful.

#![allow(dead_code)]

use kwcontrast::encoder::EncoderParams;
use kwcontrast::losses::LossKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

/// Mirrors the library's skip threshold for anchors without kernel mass.
pub const MIN_ANCHOR_WEIGHT: f64 = 1e-12;
/// Mirrors the library's bound on threshold-loss multipliers.
pub const THRESHOLD_CAP: f64 = 1e6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Rows {
    (0..n)
        .map(|_| (0..d).map(|_| normal(rng)).collect())
        .collect()
}

pub fn rbf(delta: f64, sigma: f64) -> f64 {
    (-(delta * delta) / (2.0 * sigma * sigma)).exp()
}

pub fn kernel_weights(labels: &[f64], sigma: f64) -> Rows {
    labels
        .iter()
        .map(|a| labels.iter().map(|b| rbf(a - b, sigma)).collect())
        .collect()
}

pub fn equality_weights(labels: &[f64]) -> Rows {
    labels
        .iter()
        .map(|a| {
            labels
                .iter()
                .map(|b| if a == b { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Cosine similarity divided by the temperature, computed from raw rows.
pub fn similarities(raw: &[Vec<f64>], tau: f64) -> Rows {
    let unit: Rows = raw
        .iter()
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect();
    unit.iter()
        .map(|a| {
            unit.iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / tau)
                .collect()
        })
        .collect()
}

/// Loss of one anchor from its similarity row `s` and weight row `w`, or `None`
/// when the anchor does not contribute.
pub fn anchor_loss(
    kind: LossKind,
    anchor: usize,
    s: &[f64],
    w: &[f64],
    include_positive: bool,
) -> Option<f64> {
    let others: Vec<usize> = (0..s.len()).filter(|&j| j != anchor).collect();
    let total: f64 = others.iter().map(|&j| w[j]).sum();
    match kind {
        LossKind::InfoNce => {
            let pos: Vec<usize> = others.iter().copied().filter(|&j| w[j] == 1.0).collect();
            let neg: Vec<usize> = others.iter().copied().filter(|&j| w[j] == 0.0).collect();
            if pos.is_empty() || neg.is_empty() {
                return None;
            }
            let negs: f64 = neg.iter().map(|&t| s[t].exp()).sum();
            let sum: f64 = pos
                .iter()
                .map(|&k| (s[k].exp() / (s[k].exp() + negs)).ln())
                .sum();
            Some(-sum / pos.len() as f64)
        }
        LossKind::YAware => {
            if total < MIN_ANCHOR_WEIGHT {
                return None;
            }
            let z: f64 = others.iter().map(|&t| s[t].exp()).sum();
            Some(
                -others
                    .iter()
                    .map(|&k| w[k] / total * (s[k].exp() / z).ln())
                    .sum::<f64>(),
            )
        }
        LossKind::Threshold => {
            if total < MIN_ANCHOR_WEIGHT {
                return None;
            }
            let mut value = 0.0;
            for &k in &others {
                let lesser: Vec<usize> = others.iter().copied().filter(|&t| w[t] < w[k]).collect();
                if lesser.is_empty() {
                    continue;
                }
                let norm: f64 = lesser.iter().map(|&t| w[t]).sum();
                let c = (w[k] / norm).min(THRESHOLD_CAP);
                let mut z: f64 = lesser.iter().map(|&t| s[t].exp()).sum();
                if include_positive {
                    z += s[k].exp();
                }
                value -= c * (s[k].exp() / z).ln();
            }
            Some(value)
        }
        LossKind::Exp => {
            if total < MIN_ANCHOR_WEIGHT {
                return None;
            }
            let mut value = 0.0;
            for &k in &others {
                if w[k] == 0.0 {
                    continue;
                }
                let rest: Vec<usize> = others.iter().copied().filter(|&t| t != k).collect();
                if rest.is_empty() && !include_positive {
                    continue;
                }
                let mut z: f64 = rest.iter().map(|&t| (s[t] * (1.0 - w[t])).exp()).sum();
                if include_positive {
                    z += s[k].exp();
                }
                value -= w[k] / total * (s[k].exp() / z).ln();
            }
            Some(value)
        }
        LossKind::L1Baseline => panic!("not a contrastive loss"),
    }
}

/// Batch loss: mean over contributing anchors.
pub fn batch_loss_with_weights(
    kind: LossKind,
    sim: &[Vec<f64>],
    w: &[Vec<f64>],
    include_positive: bool,
) -> Option<f64> {
    let vals: Vec<f64> = (0..sim.len())
        .filter_map(|i| anchor_loss(kind, i, &sim[i], &w[i], include_positive))
        .collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Batch loss from raw rows and labels with the weights each kind prescribes.
pub fn batch_loss(
    kind: LossKind,
    raw: &[Vec<f64>],
    labels: &[f64],
    tau: f64,
    sigma: f64,
) -> Option<f64> {
    let w = match kind {
        LossKind::InfoNce => equality_weights(labels),
        _ => kernel_weights(labels, sigma),
    };
    batch_loss_with_weights(kind, &similarities(raw, tau), &w, false)
}

pub fn l1(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64
}

/// Central differences of `f` at every coordinate of `x`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with a floor on the magnitude so that components which are
/// zero in both gradients do not divide by zero.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Encoder forward pass written out layer by layer: standardize, ReLU hidden
/// layers, linear projection, unit normalization.
pub fn encoder_embeddings(p: &EncoderParams<f64>, x: &[Vec<f64>]) -> Rows {
    x.iter()
        .map(|row| {
            let top = trunk(p, row);
            let raw = affine(p.projection.weight.as_slice(), &p.projection.bias, &top);
            let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            raw.iter().map(|v| v / n).collect()
        })
        .collect()
}

/// Regression head output in standardized units.
pub fn encoder_regression(p: &EncoderParams<f64>, x: &[Vec<f64>]) -> Vec<f64> {
    x.iter()
        .map(|row| {
            affine(
                p.regression_head.weight.as_slice(),
                &p.regression_head.bias,
                &trunk(p, row),
            )[0]
        })
        .collect()
}

fn trunk(p: &EncoderParams<f64>, row: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = row
        .iter()
        .zip(&p.input_mean)
        .zip(&p.input_scale)
        .map(|((v, m), s)| (v - m) / s)
        .collect();
    for layer in &p.hidden {
        a = affine(layer.weight.as_slice(), &layer.bias, &a)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
    }
    a
}

/// `W a + b` with `W` stored row-major as outputs x inputs.
fn affine(w: &[f64], b: &[f64], a: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, bias)| bias + (0..a.len()).map(|i| w[o * a.len() + i] * a[i]).sum::<f64>())
        .collect()
}

pub fn challenge_score(bacc: f64, mae_ext: f64) -> f64 {
    bacc.powf(0.3) * mae_ext
}

/// AUC by counting concordant positive/negative pairs; ties count one half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Mean of per-class recalls.
pub fn balanced_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let classes: std::collections::BTreeSet<usize> = truth.iter().copied().collect();
    let recalls: Vec<f64> = classes
        .iter()
        .map(|&c| {
            let n = truth.iter().filter(|&&t| t == c).count() as f64;
            let hit = pred
                .iter()
                .zip(truth)
                .filter(|(&p, &t)| t == c && p == c)
                .count() as f64;
            hit / n
        })
        .collect();
    recalls.iter().sum::<f64>() / recalls.len() as f64
}
