//! Degree-of-similarity weights between continuous labels.
//!
//! A kernel `K` maps a label difference `y_anchor - y_k` to a weight in `[0, 1]`
//! that says how much sample `k` should be treated as a positive for the anchor.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Default bandwidth in label units (years for age).
pub const DEFAULT_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec<T> {
    pub family: KernelFamily,
    pub sigma: T,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn rbf(sigma: T) -> Result<Self> {
        let spec = Self {
            family: KernelFamily::Rbf,
            sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > T::zero()) {
            return Err(invalid(format!(
                "kernel bandwidth must be positive and finite, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Kernel value for a label difference. See [`kernel_eval`].
    pub fn eval(&self, delta: T) -> Result<T> {
        kernel_eval(delta, self)
    }
}

impl<T: Scalar> Default for KernelSpec<T> {
    fn default() -> Self {
        Self {
            family: KernelFamily::Rbf,
            sigma: T::lit(DEFAULT_SIGMA),
        }
    }
}

/// `exp(-delta^2 / (2 sigma^2))` for the RBF family.
pub fn kernel_eval<T: Scalar>(delta: T, spec: &KernelSpec<T>) -> Result<T> {
    spec.validate()?;
    if !delta.is_finite() {
        return Err(invalid(format!(
            "label difference must be finite, got {delta}"
        )));
    }
    Ok(rbf_unchecked(delta, spec.sigma))
}

#[inline]
pub(crate) fn rbf_unchecked<T: Scalar>(delta: T, sigma: T) -> T {
    let z = delta / sigma;
    (-(z * z) / T::lit(2.0)).exp()
}

/// Kernel weights of every sample in `labels` relative to one anchor label.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T>(pub Vec<T>);

impl<T> WeightVector<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn weights_for_anchor<T: Scalar>(
    anchor_label: T,
    labels: &[T],
    spec: &KernelSpec<T>,
) -> Result<WeightVector<T>> {
    if labels.is_empty() {
        return Err(invalid("weights_for_anchor needs at least one label"));
    }
    if !anchor_label.is_finite() {
        return Err(invalid("anchor label must be finite"));
    }
    labels
        .iter()
        .map(|&y| kernel_eval(anchor_label - y, spec))
        .collect::<Result<Vec<_>>>()
        .map(WeightVector)
}
