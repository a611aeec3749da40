//! Per-anchor loss terms and their derivatives with respect to the anchor's
//! similarity row. `sim` and `w` are full rows of length N; index `anchor` is
//! excluded everywhere.

use super::{MIN_ANCHOR_WEIGHT, THRESHOLD_MULTIPLIER_CAP};
use crate::error::{invalid, Result};
use crate::scalar::{log_sum_exp, Scalar};

pub(super) struct AnchorTerm<T> {
    pub value: T,
    /// d(value) / d(sim[anchor][j]); zero at `anchor`.
    pub dsim: Vec<T>,
}

fn others(n: usize, anchor: usize) -> impl Iterator<Item = usize> + Clone {
    (0..n).filter(move |&j| j != anchor)
}

fn weight_total<T: Scalar>(w: &[T], anchor: usize) -> T {
    others(w.len(), anchor).map(|j| w[j]).sum()
}

pub(super) fn infonce_anchor<T: Scalar>(
    anchor: usize,
    sim: &[T],
    w: &[T],
) -> Result<Option<AnchorTerm<T>>> {
    let n = sim.len();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for j in others(n, anchor) {
        if w[j] == T::one() {
            pos.push(j);
        } else if w[j] == T::zero() {
            neg.push(j);
        } else {
            return Err(invalid(format!(
                "infonce needs binary weights, got {} at ({anchor}, {j})",
                w[j]
            )));
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Ok(None);
    }
    let scale = T::one() / T::from_usize_lossy(pos.len());
    let mut value = T::zero();
    let mut dsim = vec![T::zero(); n];
    for &k in &pos {
        let members = || std::iter::once(k).chain(neg.iter().copied());
        let lse = log_sum_exp(members().map(|t| sim[t]));
        value -= scale * (sim[k] - lse);
        dsim[k] -= scale;
        for t in members() {
            dsim[t] += scale * (sim[t] - lse).exp();
        }
    }
    Ok(Some(AnchorTerm { value, dsim }))
}

pub(super) fn yaware_anchor<T: Scalar>(anchor: usize, sim: &[T], w: &[T]) -> Option<AnchorTerm<T>> {
    let n = sim.len();
    let total = weight_total(w, anchor);
    if total < T::lit(MIN_ANCHOR_WEIGHT) {
        return None;
    }
    let lse = log_sum_exp(others(n, anchor).map(|t| sim[t]));
    let mut value = T::zero();
    let mut dsim = vec![T::zero(); n];
    // sum_k p_k = 1, so d/ds_t = softmax_t - p_t
    for j in others(n, anchor) {
        let p = w[j] / total;
        value -= p * (sim[j] - lse);
        dsim[j] = (sim[j] - lse).exp() - p;
    }
    Some(AnchorTerm { value, dsim })
}

pub(super) fn threshold_anchor<T: Scalar>(
    anchor: usize,
    sim: &[T],
    w: &[T],
    include_positive: bool,
    capped: &mut usize,
) -> Option<AnchorTerm<T>> {
    let n = sim.len();
    if weight_total(w, anchor) < T::lit(MIN_ANCHOR_WEIGHT) {
        return None;
    }
    let cap = T::lit(THRESHOLD_MULTIPLIER_CAP);
    let mut value = T::zero();
    let mut dsim = vec![T::zero(); n];
    let mut lesser = Vec::with_capacity(n);
    for k in others(n, anchor) {
        lesser.clear();
        lesser.extend(others(n, anchor).filter(|&t| w[t] < w[k]));
        if lesser.is_empty() {
            continue;
        }
        let norm: T = lesser.iter().map(|&t| w[t]).sum();
        let mut c = w[k] / norm;
        if !(c <= cap) {
            c = cap;
            *capped += 1;
        }
        let extra = include_positive.then_some(k);
        let members = || lesser.iter().copied().chain(extra);
        let lse = log_sum_exp(members().map(|t| sim[t]));
        value -= c * (sim[k] - lse);
        dsim[k] -= c;
        for t in members() {
            dsim[t] += c * (sim[t] - lse).exp();
        }
    }
    Some(AnchorTerm { value, dsim })
}

pub(super) fn exp_anchor<T: Scalar>(
    anchor: usize,
    sim: &[T],
    w: &[T],
    include_positive: bool,
) -> Option<AnchorTerm<T>> {
    let n = sim.len();
    let total = weight_total(w, anchor);
    if total < T::lit(MIN_ANCHOR_WEIGHT) {
        return None;
    }
    let mut value = T::zero();
    let mut dsim = vec![T::zero(); n];
    let exponent = |t: usize| sim[t] * (T::one() - w[t]);
    for k in others(n, anchor) {
        if w[k] == T::zero() {
            continue;
        }
        let rest = others(n, anchor).filter(move |&t| t != k);
        let has_rest = rest.clone().next().is_some();
        if !has_rest && !include_positive {
            continue;
        }
        let lse = if include_positive {
            log_sum_exp(rest.clone().map(exponent).chain(std::iter::once(sim[k])))
        } else {
            log_sum_exp(rest.clone().map(exponent))
        };
        let c = w[k] / total;
        value -= c * (sim[k] - lse);
        dsim[k] -= c;
        if include_positive {
            dsim[k] += c * (sim[k] - lse).exp();
        }
        for t in rest {
            dsim[t] += c * (exponent(t) - lse).exp() * (T::one() - w[t]);
        }
    }
    Some(AnchorTerm { value, dsim })
}
