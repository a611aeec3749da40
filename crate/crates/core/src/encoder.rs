//! Feed-forward encoder mapping feature vectors onto the unit hypersphere.
//!
//! Layout: standardized input -> hidden rectifier layers -> linear projection
//! -> row normalization. A scalar regression head hangs off the last hidden
//! layer for the L1 baseline; its activations are that model's representation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::similarity::{normalize_rows_backward, normalize_rows_with_norms, EmbeddingBatch};

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
pub const DEFAULT_EMBEDDING_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
}

impl Architecture {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: DEFAULT_HIDDEN.to_vec(),
            embedding_dim: DEFAULT_EMBEDDING_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        if self.embedding_dim < 2 {
            return Err(invalid("embedding dimension must be at least 2"));
        }
        Ok(())
    }

    fn representation_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }
}

/// Affine map `y = W x + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn he(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / inputs as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..inputs * outputs)
            .map(|_| T::lit(normal.sample(rng)))
            .collect();
        Self {
            weight: Matrix::from_vec(outputs, inputs, data).expect("sized buffer"),
            bias: vec![T::zero(); outputs],
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    /// Batch forward: `x` is `N x in`, result `N x out`.
    fn forward(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut y = x.matmul_t(&self.weight).expect("composed shapes");
        for i in 0..y.rows() {
            for (v, &b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    fn backward(&self, x: &Matrix<T>, grad_out: &Matrix<T>, grads: &mut Layer<T>) -> Matrix<T> {
        let gw = grad_out.t_matmul(x).expect("composed shapes");
        for (a, &b) in grads.weight.as_mut_slice().iter_mut().zip(gw.as_slice()) {
            *a += b;
        }
        for i in 0..grad_out.rows() {
            for (a, &b) in grads.bias.iter_mut().zip(grad_out.row(i)) {
                *a += b;
            }
        }
        grad_out.matmul(&self.weight).expect("composed shapes")
    }
}

/// Encoder weights plus the fixed input/target standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams<T> {
    pub arch: Architecture,
    pub input_mean: Vec<T>,
    pub input_scale: Vec<T>,
    pub hidden: Vec<Layer<T>>,
    pub projection: Layer<T>,
    pub regression_head: Layer<T>,
    /// Regression head outputs are in units of `(age - target_mean) / target_scale`.
    pub target_mean: T,
    pub target_scale: T,
}

impl<T: Scalar> EncoderParams<T> {
    /// He-initialized parameters with identity standardization.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hidden = Vec::with_capacity(arch.hidden.len());
        let mut width = arch.input_dim;
        for &h in &arch.hidden {
            hidden.push(Layer::he(width, h, &mut rng));
            width = h;
        }
        let projection = Layer::he(width, arch.embedding_dim, &mut rng);
        let regression_head = Layer::he(width, 1, &mut rng);
        Ok(Self {
            input_mean: vec![T::zero(); arch.input_dim],
            input_scale: vec![T::one(); arch.input_dim],
            arch,
            hidden,
            projection,
            regression_head,
            target_mean: T::zero(),
            target_scale: T::one(),
        })
    }

    /// A parameter set with the same shapes and every entry zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            input_mean: self.input_mean.clone(),
            input_scale: self.input_scale.clone(),
            hidden: self.hidden.iter().map(Layer::zeros_like).collect(),
            projection: self.projection.zeros_like(),
            regression_head: self.regression_head.zeros_like(),
            target_mean: self.target_mean,
            target_scale: self.target_scale,
        }
    }

    /// Sets the input standardization from training features (zero-variance
    /// columns keep scale 1).
    pub fn fit_standardization(&mut self, features: &Matrix<T>) -> Result<()> {
        self.check_width(features)?;
        let n = features.rows();
        if n == 0 {
            return Err(invalid("cannot standardize on an empty feature matrix"));
        }
        let nf = T::from_usize_lossy(n);
        for j in 0..features.cols() {
            let mean = (0..n).map(|i| features[(i, j)]).sum::<T>() / nf;
            let var = (0..n).map(|i| (features[(i, j)] - mean).powi(2)).sum::<T>() / nf;
            self.input_mean[j] = mean;
            self.input_scale[j] = if var > T::epsilon() {
                var.sqrt()
            } else {
                T::one()
            };
        }
        Ok(())
    }

    pub fn fit_target_standardization(&mut self, labels: &[T]) -> Result<()> {
        if labels.is_empty() {
            return Err(invalid("cannot standardize an empty label set"));
        }
        let nf = T::from_usize_lossy(labels.len());
        let mean = labels.iter().copied().sum::<T>() / nf;
        let var = labels.iter().map(|&y| (y - mean).powi(2)).sum::<T>() / nf;
        self.target_mean = mean;
        self.target_scale = if var > T::epsilon() {
            var.sqrt()
        } else {
            T::one()
        };
        Ok(())
    }

    /// Trainable tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(2 * self.hidden.len() + 4);
        for l in self
            .hidden
            .iter()
            .chain([&self.projection, &self.regression_head])
        {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * self.hidden.len() + 4);
        for l in self
            .hidden
            .iter_mut()
            .chain([&mut self.projection, &mut self.regression_head])
        {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_width(&self, features: &Matrix<T>) -> Result<()> {
        if features.cols() != self.arch.input_dim {
            return Err(invalid(format!(
                "features have {} columns, encoder expects {}",
                features.cols(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    fn standardize(&self, features: &Matrix<T>) -> Matrix<T> {
        let mut x = features.clone();
        for i in 0..x.rows() {
            for ((v, &m), &s) in x
                .row_mut(i)
                .iter_mut()
                .zip(&self.input_mean)
                .zip(&self.input_scale)
            {
                *v = (*v - m) / s;
            }
        }
        x
    }

    /// Runs the hidden stack and keeps the activations needed for backprop.
    fn trunk(&self, features: &Matrix<T>) -> Result<Trunk<T>> {
        self.check_width(features)?;
        let mut inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut x = self.standardize(features);
        for layer in &self.hidden {
            let mut z = layer.forward(&x);
            for v in z.as_mut_slice() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
            inputs.push(x);
            x = z;
        }
        Ok(Trunk { inputs, top: x })
    }

    fn trunk_backward(&self, trunk: &Trunk<T>, mut grad: Matrix<T>, grads: &mut EncoderParams<T>) {
        let mut act = &trunk.top;
        for (li, layer) in self.hidden.iter().enumerate().rev() {
            // rectifier mask: output activation was clamped at zero
            for (g, &a) in grad.as_mut_slice().iter_mut().zip(act.as_slice()) {
                if a <= T::zero() {
                    *g = T::zero();
                }
            }
            let input = &trunk.inputs[li];
            grad = layer.backward(input, &grad, &mut grads.hidden[li]);
            act = input;
        }
    }

    /// Maps features to unit embeddings.
    pub fn forward(&self, features: &Matrix<T>) -> Result<EmbeddingBatch<T>> {
        Ok(self.forward_cached(features)?.embeddings)
    }

    pub fn forward_cached(&self, features: &Matrix<T>) -> Result<ForwardCache<T>> {
        let trunk = self.trunk(features)?;
        let raw = self.projection.forward(&trunk.top);
        let (embeddings, norms) = normalize_rows_with_norms(&raw)?;
        Ok(ForwardCache {
            trunk,
            embeddings,
            norms,
        })
    }

    /// Backprop of `dL/d(embeddings)` into a fresh gradient set.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_embeddings: &Matrix<T>,
    ) -> EncoderParams<T> {
        let mut grads = self.zeros_like();
        let grad_raw = normalize_rows_backward(&cache.embeddings, &cache.norms, grad_embeddings);
        let grad_top = self
            .projection
            .backward(&cache.trunk.top, &grad_raw, &mut grads.projection);
        self.trunk_backward(&cache.trunk, grad_top, &mut grads);
        grads
    }

    /// Last hidden activations (the regression baseline's representation).
    pub fn penultimate(&self, features: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.trunk(features)?.top)
    }

    /// Regression head output in label units.
    pub fn predict_regression(&self, features: &Matrix<T>) -> Result<Vec<T>> {
        let trunk = self.trunk(features)?;
        let out = self.regression_head.forward(&trunk.top);
        Ok(out
            .as_slice()
            .iter()
            .map(|&z| z * self.target_scale + self.target_mean)
            .collect())
    }

    /// Regression head output (standardized units) with the trunk cache.
    pub fn regression_cached(&self, features: &Matrix<T>) -> Result<(Vec<T>, Trunk<T>)> {
        let trunk = self.trunk(features)?;
        let out = self.regression_head.forward(&trunk.top).into_vec();
        Ok((out, trunk))
    }

    /// Backprop of `dL/d(standardized head output)`.
    pub fn regression_backward(&self, trunk: &Trunk<T>, grad_out: &[T]) -> EncoderParams<T> {
        let mut grads = self.zeros_like();
        let g = Matrix::from_vec(grad_out.len(), 1, grad_out.to_vec()).expect("column");
        let grad_top = self
            .regression_head
            .backward(&trunk.top, &g, &mut grads.regression_head);
        self.trunk_backward(trunk, grad_top, &mut grads);
        grads
    }

    pub fn representation_dim(&self) -> usize {
        self.arch.representation_dim()
    }

    /// Verifies that every tensor matches the declared architecture.
    pub fn check_shapes(&self) -> Result<()> {
        self.arch.validate()?;
        let d = self.arch.input_dim;
        if self.input_mean.len() != d || self.input_scale.len() != d {
            return Err(invalid("standardization length differs from input_dim"));
        }
        if self.hidden.len() != self.arch.hidden.len() {
            return Err(invalid("hidden layer count differs from the architecture"));
        }
        let check = |layer: &Layer<T>, inputs: usize, outputs: usize| {
            if layer.weight.rows() != outputs
                || layer.weight.cols() != inputs
                || layer.bias.len() != outputs
            {
                return Err(invalid(format!(
                    "layer is {}x{} with {} biases, expected {outputs}x{inputs}",
                    layer.weight.rows(),
                    layer.weight.cols(),
                    layer.bias.len()
                )));
            }
            Ok(())
        };
        let mut width = d;
        for (layer, &out) in self.hidden.iter().zip(&self.arch.hidden) {
            check(layer, width, out)?;
            width = out;
        }
        check(&self.projection, width, self.arch.embedding_dim)?;
        check(&self.regression_head, width, 1)?;
        if self.input_scale.iter().any(|&s| s <= T::zero()) || !(self.target_scale > T::zero()) {
            return Err(invalid("standardization scales must be positive"));
        }
        Ok(())
    }
}

/// Activations of the hidden stack for one batch.
#[derive(Debug, Clone)]
pub struct Trunk<T> {
    inputs: Vec<Matrix<T>>,
    top: Matrix<T>,
}

impl<T> Trunk<T> {
    pub fn top(&self) -> &Matrix<T> {
        &self.top
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub trunk: Trunk<T>,
    pub embeddings: EmbeddingBatch<T>,
    pub norms: Vec<T>,
}
