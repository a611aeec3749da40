//! Contrastive losses over a batch of unit embeddings with continuous labels,
//! plus the L1 regression baseline.
//!
//! Every sample acts as anchor once. For anchor `i` the comparison set is every
//! other sample in the batch; `w_k` is the kernel weight between the anchor's
//! label and sample `k`'s label and `s_k` the temperature-scaled cosine
//! similarity. Weights are constants for differentiation.

mod gradcheck;
mod l1;
mod weighted;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::kernel::{rbf_unchecked, KernelSpec};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::similarity::{similarity_backward, similarity_matrix, EmbeddingBatch, SimilarityConfig};

pub use gradcheck::{l1_gradient_check, loss_gradient_check};
pub use l1::{l1_regression_loss, L1Result};

/// Anchors whose total kernel weight is below this are skipped.
pub const MIN_ANCHOR_WEIGHT: f64 = 1e-12;
/// Upper bound on the per-term multiplier of the threshold loss.
pub const THRESHOLD_MULTIPLIER_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[serde(rename = "infonce")]
    InfoNce,
    #[serde(rename = "yaware")]
    YAware,
    Threshold,
    Exp,
    #[serde(rename = "l1")]
    L1Baseline,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::InfoNce,
        LossKind::YAware,
        LossKind::Threshold,
        LossKind::Exp,
        LossKind::L1Baseline,
    ];

    pub fn is_contrastive(self) -> bool {
        !matches!(self, LossKind::L1Baseline)
    }

    pub fn uses_kernel(self) -> bool {
        matches!(self, LossKind::YAware | LossKind::Threshold | LossKind::Exp)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::InfoNce => "infonce",
            LossKind::YAware => "yaware",
            LossKind::Threshold => "threshold",
            LossKind::Exp => "exp",
            LossKind::L1Baseline => "l1",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "infonce" | "info_nce" => Ok(LossKind::InfoNce),
            "yaware" | "y-aware" | "y_aware" => Ok(LossKind::YAware),
            "threshold" | "thr" => Ok(LossKind::Threshold),
            "exp" => Ok(LossKind::Exp),
            "l1" | "l1_baseline" => Ok(LossKind::L1Baseline),
            other => Err(invalid(format!("unknown loss kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig<T> {
    pub kind: LossKind,
    pub kernel: KernelSpec<T>,
    pub similarity: SimilarityConfig<T>,
    #[serde(default)]
    pub include_positive_in_denominator: bool,
}

impl<T: Scalar> LossConfig<T> {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            kernel: KernelSpec::default(),
            similarity: SimilarityConfig::default(),
            include_positive_in_denominator: false,
        }
    }

    pub fn with_sigma(mut self, sigma: T) -> Self {
        self.kernel.sigma = sigma;
        self
    }

    pub fn with_temperature(mut self, tau: T) -> Self {
        self.similarity.temperature = tau;
        self
    }

    pub fn with_positive_in_denominator(mut self, flag: bool) -> Self {
        self.include_positive_in_denominator = flag;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.similarity.validate()?;
        if self.kind.uses_kernel() {
            self.kernel.validate()?;
        }
        Ok(())
    }
}

/// Output of a batch contrastive loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult<T> {
    /// Mean of the non-skipped per-anchor values.
    pub value: T,
    /// Gradient of `value` with respect to the (unit-norm) embedding rows.
    pub gradient: Matrix<T>,
    /// Per-anchor value, `None` for skipped anchors.
    pub per_anchor: Vec<Option<T>>,
}

impl<T: Scalar> LossResult<T> {
    pub fn contributing_anchors(&self) -> usize {
        self.per_anchor.iter().filter(|v| v.is_some()).count()
    }
}

/// Pairwise weights `w[i][k]` between anchor `i` and sample `k`. The diagonal is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix<T>(Matrix<T>);

impl<T: Scalar> WeightMatrix<T> {
    pub fn new(weights: Matrix<T>) -> Result<Self> {
        if weights.rows() != weights.cols() {
            return Err(invalid("weight matrix must be square"));
        }
        for (idx, &w) in weights.as_slice().iter().enumerate() {
            if !(w >= T::zero() && w <= T::one()) {
                return Err(invalid(format!(
                    "weight at ({}, {}) is {w}, outside [0, 1]",
                    idx / weights.cols(),
                    idx % weights.cols()
                )));
            }
        }
        Ok(Self(weights))
    }

    /// Kernel weights from continuous labels.
    pub fn from_kernel(labels: &[T], kernel: &KernelSpec<T>) -> Result<Self> {
        kernel.validate()?;
        check_labels(labels)?;
        let n = labels.len();
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                w[(i, k)] = rbf_unchecked(labels[i] - labels[k], kernel.sigma);
            }
        }
        Ok(Self(w))
    }

    /// Binary weights: positive iff the labels are equal.
    pub fn from_equal_labels(labels: &[T]) -> Result<Self> {
        check_labels(labels)?;
        let n = labels.len();
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                if labels[i] == labels[k] {
                    w[(i, k)] = T::one();
                }
            }
        }
        Ok(Self(w))
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }
}

fn check_labels<T: Scalar>(labels: &[T]) -> Result<()> {
    if let Some(i) = labels.iter().position(|y| !y.is_finite()) {
        return Err(invalid(format!("label {i} is not finite")));
    }
    Ok(())
}

/// Contrastive loss with an explicit weight matrix.
///
/// `kind` must be contrastive. For [`LossKind::InfoNce`] the weights must be binary.
pub fn contrastive_loss_with_weights<T: Scalar>(
    kind: LossKind,
    embeddings: &EmbeddingBatch<T>,
    weights: &WeightMatrix<T>,
    similarity: &SimilarityConfig<T>,
    include_positive: bool,
) -> Result<LossResult<T>> {
    let n = embeddings.len();
    if n < 2 {
        return Err(invalid(format!(
            "contrastive losses need a batch of at least 2, got {n}"
        )));
    }
    if weights.len() != n {
        return Err(invalid(format!(
            "weight matrix is {}x{0}, batch has {n} rows",
            weights.len()
        )));
    }
    let sim = similarity_matrix(embeddings, similarity)?;
    let mut grad_sim = Matrix::zeros(n, n);
    let mut per_anchor = Vec::with_capacity(n);
    let mut total = T::zero();
    let mut count = 0usize;
    let mut capped = 0usize;

    for i in 0..n {
        let term = match kind {
            LossKind::InfoNce => weighted::infonce_anchor(i, sim.row(i), weights.row(i))?,
            LossKind::YAware => weighted::yaware_anchor(i, sim.row(i), weights.row(i)),
            LossKind::Threshold => weighted::threshold_anchor(
                i,
                sim.row(i),
                weights.row(i),
                include_positive,
                &mut capped,
            ),
            LossKind::Exp => weighted::exp_anchor(i, sim.row(i), weights.row(i), include_positive),
            LossKind::L1Baseline => {
                return Err(invalid("the L1 baseline is not a contrastive loss"));
            }
        };
        match term {
            Some(t) => {
                total += t.value;
                count += 1;
                grad_sim.row_mut(i).copy_from_slice(&t.dsim);
                per_anchor.push(Some(t.value));
            }
            None => per_anchor.push(None),
        }
    }
    if capped > 0 {
        log::warn!(
            "threshold loss: {capped} term multiplier(s) capped at {THRESHOLD_MULTIPLIER_CAP:e}"
        );
    }
    if count == 0 {
        return Err(Error::DegenerateBatch(format!(
            "every anchor was skipped for the {kind} loss"
        )));
    }
    let inv = T::one() / T::from_usize_lossy(count);
    for g in grad_sim.as_mut_slice() {
        *g *= inv;
    }
    let gradient = similarity_backward(embeddings, &grad_sim, sim.temperature());
    Ok(LossResult {
        value: total * inv,
        gradient,
        per_anchor,
    })
}

/// Contrastive loss with weights derived from labels according to `cfg.kind`.
pub fn contrastive_loss<T: Scalar>(
    embeddings: &EmbeddingBatch<T>,
    labels: &[T],
    cfg: &LossConfig<T>,
) -> Result<LossResult<T>> {
    cfg.validate()?;
    if labels.len() != embeddings.len() {
        return Err(invalid(format!(
            "{} labels for a batch of {}",
            labels.len(),
            embeddings.len()
        )));
    }
    let weights = match cfg.kind {
        LossKind::InfoNce => WeightMatrix::from_equal_labels(labels)?,
        LossKind::YAware | LossKind::Threshold | LossKind::Exp => {
            WeightMatrix::from_kernel(labels, &cfg.kernel)?
        }
        LossKind::L1Baseline => return Err(invalid("the L1 baseline is not a contrastive loss")),
    };
    contrastive_loss_with_weights(
        cfg.kind,
        embeddings,
        &weights,
        &cfg.similarity,
        cfg.include_positive_in_denominator,
    )
}

/// Binary contrastive loss; samples with equal labels are positives.
pub fn infonce_loss<T: Scalar>(
    embeddings: &EmbeddingBatch<T>,
    labels: &[T],
    cfg: &LossConfig<T>,
) -> Result<LossResult<T>> {
    contrastive_loss(
        embeddings,
        labels,
        &LossConfig {
            kind: LossKind::InfoNce,
            ..*cfg
        },
    )
}

/// Kernel-weighted contrastive loss whose denominator spans the whole comparison set.
pub fn yaware_loss<T: Scalar>(
    embeddings: &EmbeddingBatch<T>,
    labels: &[T],
    cfg: &LossConfig<T>,
) -> Result<LossResult<T>> {
    contrastive_loss(
        embeddings,
        labels,
        &LossConfig {
            kind: LossKind::YAware,
            ..*cfg
        },
    )
}

/// Kernel-weighted loss that only repels samples strictly less similar (in label) than `k`.
pub fn threshold_loss<T: Scalar>(
    embeddings: &EmbeddingBatch<T>,
    labels: &[T],
    cfg: &LossConfig<T>,
) -> Result<LossResult<T>> {
    contrastive_loss(
        embeddings,
        labels,
        &LossConfig {
            kind: LossKind::Threshold,
            ..*cfg
        },
    )
}

/// Kernel-weighted loss whose repulsion of sample `t` is scaled by `1 - w_t`.
pub fn exp_loss<T: Scalar>(
    embeddings: &EmbeddingBatch<T>,
    labels: &[T],
    cfg: &LossConfig<T>,
) -> Result<LossResult<T>> {
    contrastive_loss(
        embeddings,
        labels,
        &LossConfig {
            kind: LossKind::Exp,
            ..*cfg
        },
    )
}
