//! Linear probing of frozen representations with multinomial logistic regression.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the objective changes by less than this between iterations.
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

/// Softmax classifier over standardized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbe {
    pub n_classes: usize,
    /// `n_classes x d`.
    pub weights: Matrix<f64>,
    pub bias: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    pub iterations: usize,
}

fn standardizer(x: &Matrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let d = x.cols();
    let mut mean = vec![0.0; d];
    for r in x.row_iter() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in x.row_iter() {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let scale = var
        .into_iter()
        .map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, scale)
}

fn apply(x: &Matrix<f64>, mean: &[f64], scale: &[f64]) -> Matrix<f64> {
    let mut z = x.clone();
    for i in 0..z.rows() {
        for ((v, m), s) in z.row_mut(i).iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
    z
}

/// Mean cross-entropy plus `l2/2 |W|^2`, and optionally its gradient.
fn objective(
    x: &Matrix<f64>,
    y: &[usize],
    w: &Matrix<f64>,
    b: &[f64],
    l2: f64,
    grad: Option<(&mut Matrix<f64>, &mut Vec<f64>)>,
) -> f64 {
    let n = x.rows();
    let c = w.rows();
    let logits = x.matmul_t(w).expect("probe shapes");
    let mut loss = 0.0;
    let mut probs = vec![0.0; c];
    let mut grad = grad;
    if let Some((gw, gb)) = grad.as_mut() {
        gw.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        gb.iter_mut().for_each(|v| *v = 0.0);
    }
    for i in 0..n {
        let row = logits.row(i);
        let max = row
            .iter()
            .zip(b)
            .map(|(z, bb)| z + bb)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for k in 0..c {
            probs[k] = (row[k] + b[k] - max).exp();
            sum += probs[k];
        }
        loss -= (row[y[i]] + b[y[i]] - max) - sum.ln();
        if let Some((gw, gb)) = grad.as_mut() {
            let xi = x.row(i);
            for k in 0..c {
                let d = probs[k] / sum - if k == y[i] { 1.0 } else { 0.0 };
                let d = d / n as f64;
                gb[k] += d;
                for (g, v) in gw.row_mut(k).iter_mut().zip(xi) {
                    *g += d * v;
                }
            }
        }
    }
    let reg: f64 = w.as_slice().iter().map(|v| v * v).sum::<f64>() * 0.5 * l2;
    if let Some((gw, _)) = grad {
        for (g, v) in gw.as_mut_slice().iter_mut().zip(w.as_slice()) {
            *g += l2 * v;
        }
    }
    loss / n as f64 + reg
}

/// Fits by full-batch gradient descent with a backtracking step size.
pub fn fit_logistic_probe(
    x: &Matrix<f64>,
    y: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<LogisticProbe> {
    if x.rows() == 0 || x.rows() != y.len() {
        return Err(invalid("probe needs one label per non-empty row"));
    }
    if n_classes < 2 {
        return Err(invalid("probe needs at least two classes"));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(invalid(format!(
            "class {bad} out of range for {n_classes} classes"
        )));
    }
    let (mean, scale) = standardizer(x);
    let z = apply(x, &mean, &scale);
    let d = x.cols();
    let mut w = Matrix::zeros(n_classes, d);
    let mut b = vec![0.0; n_classes];
    let mut gw = Matrix::zeros(n_classes, d);
    let mut gb = vec![0.0; n_classes];
    let mut loss = objective(&z, y, &w, &b, cfg.l2, Some((&mut gw, &mut gb)));
    let mut step = 1.0;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let gnorm2: f64 = gw.as_slice().iter().chain(&gb).map(|g| g * g).sum();
        if gnorm2 == 0.0 {
            break;
        }
        let (nw, nb, nloss) = loop {
            let nw = Matrix::from_vec(
                n_classes,
                d,
                w.as_slice()
                    .iter()
                    .zip(gw.as_slice())
                    .map(|(a, g)| a - step * g)
                    .collect(),
            )?;
            let nb: Vec<f64> = b.iter().zip(&gb).map(|(a, g)| a - step * g).collect();
            let nloss = objective(&z, y, &nw, &nb, cfg.l2, None);
            if nloss <= loss - 1e-4 * step * gnorm2 || step < 1e-12 {
                break (nw, nb, nloss);
            }
            step *= 0.5;
        };
        w = nw;
        b = nb;
        let prev = loss;
        loss = objective(&z, y, &w, &b, cfg.l2, Some((&mut gw, &mut gb)));
        debug_assert!((loss - nloss).abs() < 1e-9);
        if (prev - loss).abs() < cfg.tol {
            break;
        }
        step = (step * 2.0).min(1e3);
    }
    Ok(LogisticProbe {
        n_classes,
        weights: w,
        bias: b,
        mean,
        scale,
        iterations,
    })
}

impl LogisticProbe {
    pub fn predict(&self, x: &Matrix<f64>) -> Result<Vec<usize>> {
        if x.cols() != self.weights.cols() {
            return Err(invalid("probe input width mismatch"));
        }
        let z = apply(x, &self.mean, &self.scale);
        let logits = z.matmul_t(&self.weights)?;
        Ok(logits
            .row_iter()
            .map(|r| {
                r.iter()
                    .zip(&self.bias)
                    .map(|(a, b)| a + b)
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, v)| {
                        if v > best.1 {
                            (k, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }
}

/// Unweighted mean of per-class recall over the classes present in `truth`.
pub fn balanced_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(invalid("balanced accuracy needs equal non-empty inputs"));
    }
    let classes = truth.iter().max().map_or(0, |m| m + 1);
    let mut hit = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        total[t] += 1;
        if p == t {
            hit[t] += 1;
        }
    }
    let recalls: Vec<f64> = hit
        .iter()
        .zip(&total)
        .filter(|(_, &n)| n > 0)
        .map(|(&h, &n)| h as f64 / n as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Maps string labels to dense class ids in sorted label order.
pub fn encode_labels<S: AsRef<str>>(labels: &[S]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
    names.sort();
    names.dedup();
    let ids = labels
        .iter()
        .map(|s| {
            names
                .binary_search_by(|n| n.as_str().cmp(s.as_ref()))
                .expect("present")
        })
        .collect();
    (ids, names)
}

/// Per-class round-robin fold ids, so every class appears in every fold when
/// it has at least `k` members.
pub fn stratified_probe_folds(labels: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut folds = vec![0; labels.len()];
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            folds[i] = j % k;
        }
    }
    folds
}

/// Cross-validated balanced accuracy of predicting `labels` from `x`.
pub fn probe_bacc<T: Scalar>(
    x: &Matrix<T>,
    labels: &[usize],
    folds: &[usize],
    cfg: &ProbeConfig,
) -> Result<f64> {
    if labels.len() != x.rows() || folds.len() != x.rows() {
        return Err(invalid(
            "probe inputs must have one label and one fold per row",
        ));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    if n_classes < 2 {
        return Err(invalid("site probe needs at least two sites"));
    }
    let x = x.cast::<f64>();
    let k = folds.iter().max().map_or(0, |m| m + 1);
    let mut scores = Vec::with_capacity(k);
    for fold in 0..k {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] != fold).collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == fold).collect();
        if test.is_empty() {
            continue;
        }
        for c in 0..n_classes {
            let in_train = train.iter().any(|&i| labels[i] == c);
            let in_test = test.iter().any(|&i| labels[i] == c);
            if labels.contains(&c) && !(in_train && in_test) {
                return Err(Error::InvalidFold(format!(
                    "class {c} missing from the {} split of probe fold {fold}",
                    if in_train { "test" } else { "training" }
                )));
            }
        }
        let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let probe = fit_logistic_probe(&x.select_rows(&train), &ytr, n_classes, cfg)?;
        let pred = probe.predict(&x.select_rows(&test))?;
        let yte: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        scores.push(balanced_accuracy(&pred, &yte)?);
    }
    if scores.is_empty() {
        return Err(Error::InvalidFold("no non-empty probe folds".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Site balanced accuracy of a logistic probe on frozen representations.
pub fn site_probe_bacc<T: Scalar, S: AsRef<str>>(
    embeddings: &Matrix<T>,
    site_labels: &[S],
    folds: &[usize],
) -> Result<f64> {
    let (ids, _) = encode_labels(site_labels);
    probe_bacc(embeddings, &ids, folds, &ProbeConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn recall_mean() {
        // class 0 recall 1.0, class 1 recall 0.5
        let b = balanced_accuracy(&[0, 0, 1, 0], &[0, 0, 1, 1]).unwrap();
        assert!((b - 0.75).abs() < 1e-15);
    }

    #[test]
    fn one_hot_sites_are_separable() {
        let sites: Vec<String> = (0..60).map(|i| format!("s{}", i % 4)).collect();
        let (ids, _) = encode_labels(&sites);
        let x = Matrix::from_vec(
            60,
            4,
            ids.iter()
                .flat_map(|&c| (0..4).map(move |k| if k == c { 1.0 } else { 0.0 }))
                .collect(),
        )
        .unwrap();
        let folds = stratified_probe_folds(&ids, 3, 0);
        assert_eq!(site_probe_bacc(&x, &sites, &folds).unwrap(), 1.0);
    }

    #[test]
    fn independent_embeddings_sit_at_chance() {
        let mut accs = Vec::new();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 1000;
            let ids: Vec<usize> = (0..n).map(|i| i % 10).collect();
            let x = Matrix::from_vec(
                n,
                8,
                (0..n * 8).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let folds = stratified_probe_folds(&ids, 3, seed);
            accs.push(probe_bacc(&x, &ids, &folds, &ProbeConfig::default()).unwrap());
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 0.1).abs() < 0.03, "{accs:?}");
    }

    #[test]
    fn missing_class_in_fold() {
        let ids = vec![0, 0, 0, 1, 1, 1];
        let folds = vec![0, 1, 2, 0, 0, 0];
        let x = Matrix::from_vec(6, 2, vec![0.0; 12]).unwrap();
        assert!(matches!(
            probe_bacc(&x, &ids, &folds, &ProbeConfig::default()),
            Err(Error::InvalidFold(_))
        ));
    }

    #[test]
    fn folds_cover_each_class() {
        let ids: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let f = stratified_probe_folds(&ids, 3, 9);
        for c in 0..3 {
            for fold in 0..3 {
                assert!((0..30).any(|i| ids[i] == c && f[i] == fold));
            }
        }
    }

    #[test]
    fn probe_separates_shifted_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 300;
        let ids: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let x = Matrix::from_vec(
            n,
            2,
            ids.iter()
                .flat_map(|&c| {
                    [
                        c as f64 * 3.0 + rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect(),
        )
        .unwrap();
        let probe = fit_logistic_probe(&x, &ids, 3, &ProbeConfig::default()).unwrap();
        let acc = balanced_accuracy(&probe.predict(&x).unwrap(), &ids).unwrap();
        assert!(acc > 0.95, "{acc}");
    }
}
