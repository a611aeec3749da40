//! Binary classification on top of a pre-trained encoder.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::probe::balanced_accuracy;
use crate::encoder::EncoderParams;
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::optim::{adam_step, adam_step_tensors, lr_at_epoch, AdamState, TrainConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub train: TrainConfig,
    /// Freeze the encoder and fit only the logistic head.
    pub head_only: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                initial_lr: 1e-3,
                epochs: 30,
                ..TrainConfig::default()
            },
            head_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome<T> {
    /// Held-out balanced accuracy.
    pub balanced_accuracy: f64,
    pub encoder: EncoderParams<T>,
    pub head_weight: Vec<T>,
    pub head_bias: T,
}

fn check_classes(y: &[bool], what: &str) -> Result<()> {
    if !(y.iter().any(|&v| v) && y.iter().any(|&v| !v)) {
        return Err(invalid(format!("{what} split must contain both classes")));
    }
    Ok(())
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn logits<T: Scalar>(emb: &Matrix<T>, w: &[T], b: T) -> Vec<T> {
    emb.row_iter()
        .map(|r| r.iter().zip(w).map(|(&a, &c)| a * c).sum::<T>() + b)
        .collect()
}

/// Attaches a logistic head to the embedding output and trains it (and, unless
/// `head_only`, the encoder) with class-balanced cross-entropy. Returns the
/// balanced accuracy on the test rows.
pub fn finetune_classifier<T: Scalar>(
    encoder: &EncoderParams<T>,
    train_x: &Matrix<T>,
    train_y: &[bool],
    test_x: &Matrix<T>,
    test_y: &[bool],
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome<T>> {
    cfg.train.validate()?;
    if train_x.rows() != train_y.len() || test_x.rows() != test_y.len() {
        return Err(invalid("one label per row required"));
    }
    check_classes(train_y, "training")?;
    check_classes(test_y, "test")?;

    let mut enc = encoder.clone();
    let dim = enc.arch.embedding_dim;
    let mut w = vec![T::zero(); dim];
    let mut b = [T::zero()];
    let n = train_y.len();
    let n_pos = train_y.iter().filter(|&&v| v).count();
    // each class carries half of the total weight
    let w_pos = T::lit(n as f64 / (2.0 * n_pos as f64));
    let w_neg = T::lit(n as f64 / (2.0 * (n - n_pos) as f64));

    let mut enc_state = AdamState::new(&enc);
    let mut head_state = AdamState::<T>::for_shapes([dim, 1].into_iter());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.train.epochs {
        let lr = lr_at_epoch(&cfg.train, epoch);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.train.batch_size) {
            let x = train_x.select_rows(batch);
            let cache = enc.forward_cached(&x)?;
            let e = cache.embeddings.matrix();
            let z = logits(e, &w, b[0]);
            let m = T::from_usize_lossy(batch.len());
            let mut gw = vec![T::zero(); dim];
            let mut gb = [T::zero()];
            let mut g_emb = Matrix::zeros(batch.len(), dim);
            for (r, (&i, &zi)) in batch.iter().zip(&z).enumerate() {
                let (target, weight) = if train_y[i] {
                    (T::one(), w_pos)
                } else {
                    (T::zero(), w_neg)
                };
                let d = weight * (sigmoid(zi) - target) / m;
                gb[0] += d;
                for j in 0..dim {
                    gw[j] += d * e[(r, j)];
                    g_emb.row_mut(r)[j] = d * w[j];
                }
            }
            if !cfg.head_only {
                let grads = enc.backward(&cache, &g_emb);
                adam_step(&mut enc, &grads, &mut enc_state, lr, &cfg.train)?;
            }
            adam_step_tensors(
                &mut [&mut w[..], &mut b[..]],
                &[&gw[..], &gb[..]],
                &mut head_state,
                lr,
                &cfg.train,
            )?;
        }
        if !enc.is_finite() || w.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch,
                reason: "classifier parameters became non-finite".into(),
            });
        }
    }

    let emb = enc.forward(test_x)?;
    let pred: Vec<usize> = logits(emb.matrix(), &w, b[0])
        .into_iter()
        .map(|z| usize::from(z > T::zero()))
        .collect();
    let truth: Vec<usize> = test_y.iter().map(|&v| usize::from(v)).collect();
    Ok(FinetuneOutcome {
        balanced_accuracy: balanced_accuracy(&pred, &truth)?,
        encoder: enc,
        head_weight: w,
        head_bias: b[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Architecture;
    use rand::Rng;

    fn identity_encoder(dim: usize) -> EncoderParams<f64> {
        let arch = Architecture {
            input_dim: dim,
            hidden: vec![],
            embedding_dim: dim,
        };
        let mut p = EncoderParams::init(arch, 0).unwrap();
        p.projection.weight = Matrix::identity(dim);
        p.projection.bias = vec![0.0; dim];
        p
    }

    fn cfg(head_only: bool, epochs: usize) -> FinetuneConfig {
        FinetuneConfig {
            train: TrainConfig {
                initial_lr: 1e-2,
                epochs,
                batch_size: 16,
                ..TrainConfig::default()
            },
            head_only,
        }
    }

    fn cloud(n: usize, seed: u64, separable: bool) -> (Matrix<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = i % 2 == 0;
            let shift = match (separable, label) {
                (true, true) => 1.0,
                (true, false) => -2.0,
                _ => 0.0,
            };
            data.push(shift + rng.random_range(0.1..1.0));
            data.push(rng.random_range(-1.0..1.0));
            data.push(rng.random_range(-1.0..1.0));
            y.push(label);
        }
        (Matrix::from_vec(n, 3, data).unwrap(), y)
    }

    #[test]
    fn separable_head_only() {
        let enc = identity_encoder(3);
        // the sign of the first coordinate survives row normalization
        let (x, y) = cloud(128, 1, true);
        let (xt, yt) = cloud(64, 2, true);
        let out = finetune_classifier(&enc, &x, &y, &xt, &yt, &cfg(true, 60)).unwrap();
        assert_eq!(out.balanced_accuracy, 1.0);
        assert_eq!(out.encoder, enc);
    }

    #[test]
    fn shuffled_labels_are_chance() {
        let enc = identity_encoder(3);
        let mut accs = Vec::new();
        for seed in 0..5 {
            let (x, mut y) = cloud(200, 10 + seed, false);
            let (xt, mut yt) = cloud(200, 20 + seed, false);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            y.shuffle(&mut rng);
            yt.shuffle(&mut rng);
            accs.push(
                finetune_classifier(&enc, &x, &y, &xt, &yt, &cfg(false, 10))
                    .unwrap()
                    .balanced_accuracy,
            );
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 0.5).abs() < 0.1, "{accs:?}");
    }

    #[test]
    fn full_finetune_updates_encoder() {
        let arch = Architecture {
            input_dim: 3,
            hidden: vec![8],
            embedding_dim: 4,
        };
        let enc = EncoderParams::init(arch, 3).unwrap();
        let (x, y) = cloud(64, 4, true);
        let out = finetune_classifier(&enc, &x, &y, &x, &y, &cfg(false, 20)).unwrap();
        assert_ne!(out.encoder, enc);
        assert!(out.balanced_accuracy > 0.9);
    }

    #[test]
    fn single_class_rejected() {
        let enc = identity_encoder(3);
        let (x, _) = cloud(8, 5, true);
        let all = vec![true; 8];
        let (_, mixed) = cloud(8, 5, true);
        assert!(matches!(
            finetune_classifier(&enc, &x, &all, &x, &mixed, &cfg(true, 1)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(finetune_classifier(&enc, &x, &mixed, &x, &all, &cfg(true, 1)).is_err());
    }
}
