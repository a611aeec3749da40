//! Adam with decoupled weight decay and a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub decay_every_epochs: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-4,
            lr_decay: 0.9,
            decay_every_epochs: 10,
            weight_decay: 5e-5,
            batch_size: 32,
            epochs: 300,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("initial_lr", self.initial_lr),
            ("lr_decay", self.lr_decay),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(invalid("weight_decay must be non-negative"));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.decay_every_epochs == 0 {
            return Err(invalid("decay_every_epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(invalid("batch_size must be at least 2"));
        }
        Ok(())
    }
}

/// `initial_lr * lr_decay^(epoch / decay_every_epochs)` (integer division).
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let steps = epoch / cfg.decay_every_epochs.max(1);
    cfg.initial_lr * cfg.lr_decay.powi(steps as i32)
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &EncoderParams<T>) -> Self {
        Self::for_shapes(params.tensors().iter().map(|t| t.len()))
    }

    pub fn for_shapes(lens: impl Iterator<Item = usize>) -> Self {
        let zeros: Vec<Vec<T>> = lens.map(|n| vec![T::zero(); n]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam update over parallel lists of parameter and gradient tensors.
///
/// Decoupled decay shrinks each parameter by `lr * weight_decay` before the
/// moment update is applied.
pub fn adam_step_tensors<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(invalid(
            "parameter, gradient and optimizer state shapes differ",
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(invalid("parameter and gradient tensor lengths differ"));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch: 0,
                reason: "non-finite gradient".into(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::lit(cfg.adam_beta1);
    let b2 = T::lit(cfg.adam_beta2);
    let eps = T::lit(cfg.adam_eps);
    let lr_t = T::lit(lr);
    let shrink = T::one() - T::lit(lr * cfg.weight_decay);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] * shrink - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Adam update of every trainable encoder tensor.
pub fn adam_step<T: Scalar>(
    params: &mut EncoderParams<T>,
    grads: &EncoderParams<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    adam_step_tensors(&mut p, &g, state, lr, cfg)
}
