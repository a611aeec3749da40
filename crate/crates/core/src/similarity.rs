//! Embeddings on the unit hypersphere and temperature-scaled cosine similarity.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::scalar::Scalar;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

/// A batch of row vectors, each of unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch<T> {
    vectors: Matrix<T>,
}

impl<T: Scalar> EmbeddingBatch<T> {
    /// Wraps rows that are already unit-norm (within `1e-6` relative).
    pub fn from_unit_rows(vectors: Matrix<T>) -> Result<Self> {
        if vectors.cols() < 2 {
            return Err(invalid("embedding dimension must be at least 2"));
        }
        let tol = T::lit(1e-6).max(T::epsilon() * T::lit(64.0));
        for (i, r) in vectors.row_iter().enumerate() {
            if (norm(r) - T::one()).abs() > tol {
                return Err(invalid(format!("row {i} is not unit norm")));
            }
        }
        Ok(Self { vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.vectors
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.vectors
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.vectors.row(i)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            vectors: self.vectors.select_rows(idx),
        }
    }
}

/// Projects every row onto the unit sphere.
pub fn normalize_rows<T: Scalar>(matrix: &Matrix<T>) -> Result<EmbeddingBatch<T>> {
    Ok(normalize_rows_with_norms(matrix)?.0)
}

/// Like [`normalize_rows`], also returning the original row norms for backprop.
pub fn normalize_rows_with_norms<T: Scalar>(
    matrix: &Matrix<T>,
) -> Result<(EmbeddingBatch<T>, Vec<T>)> {
    if matrix.cols() < 2 {
        return Err(invalid("embedding dimension must be at least 2"));
    }
    let mut out = matrix.clone();
    let mut norms = Vec::with_capacity(matrix.rows());
    for i in 0..matrix.rows() {
        let n = norm(matrix.row(i));
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::ZeroNormRow { row: i });
        }
        for v in out.row_mut(i) {
            *v /= n;
        }
        norms.push(n);
    }
    Ok((EmbeddingBatch { vectors: out }, norms))
}

/// Pulls a gradient with respect to normalized rows back to the raw rows.
///
/// For `e = x / |x|`: `dL/dx = (g - e (e . g)) / |x|`.
pub fn normalize_rows_backward<T: Scalar>(
    normalized: &EmbeddingBatch<T>,
    norms: &[T],
    grad: &Matrix<T>,
) -> Matrix<T> {
    let mut out = grad.clone();
    for (i, &n) in norms.iter().enumerate() {
        let e = normalized.row(i);
        let proj = dot(e, grad.row(i));
        for (o, &ej) in out.row_mut(i).iter_mut().zip(e) {
            *o = (*o - ej * proj) / n;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig<T> {
    pub temperature: T,
}

impl<T: Scalar> SimilarityConfig<T> {
    pub fn new(temperature: T) -> Result<Self> {
        let cfg = Self { temperature };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > T::zero()) {
            return Err(invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for SimilarityConfig<T> {
    fn default() -> Self {
        Self {
            temperature: T::lit(DEFAULT_TEMPERATURE),
        }
    }
}

/// Pairwise `cos / tau` similarities. The diagonal holds self-similarity and is
/// never part of an anchor's comparison set.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T> {
    values: Matrix<T>,
    temperature: T,
}

impl<T: Scalar> SimilarityMatrix<T> {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[(i, j)]
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.values.row(i)
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    /// Similarities of anchor `i` to every other sample, in index order.
    pub fn anchor_view(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        self.values
            .row(i)
            .iter()
            .copied()
            .enumerate()
            .filter(move |&(j, _)| j != i)
    }
}

pub fn similarity_matrix<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    cfg: &SimilarityConfig<T>,
) -> Result<SimilarityMatrix<T>> {
    cfg.validate()?;
    let n = batch.len();
    let inv_tau = T::one() / cfg.temperature;
    let bound = inv_tau;
    let mut values = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut v = dot(batch.row(i), batch.row(j)) * inv_tau;
            // rounding can push |cos| a few ulps past 1
            v = v.max(-bound).min(bound);
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(SimilarityMatrix {
        values,
        temperature: cfg.temperature,
    })
}

/// Chains `dL/dS` (N x N, entries for every ordered pair) into `dL/dE`.
pub(crate) fn similarity_backward<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    grad_sim: &Matrix<T>,
    temperature: T,
) -> Matrix<T> {
    let n = batch.len();
    let d = batch.dim();
    let inv_tau = T::one() / temperature;
    let mut grad = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let g = grad_sim[(i, j)] * inv_tau;
            if g == T::zero() {
                continue;
            }
            let ej = batch.row(j).to_vec();
            let ei = batch.row(i).to_vec();
            for (o, &v) in grad.row_mut(i).iter_mut().zip(&ej) {
                *o += g * v;
            }
            for (o, &v) in grad.row_mut(j).iter_mut().zip(&ei) {
                *o += g * v;
            }
        }
    }
    grad
}
