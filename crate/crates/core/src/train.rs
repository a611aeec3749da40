//! Mini-batch training of the encoder under any [`LossConfig`].

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Architecture, EncoderParams};
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::losses::{contrastive_loss, l1_regression_loss, LossConfig};
use crate::optim::{adam_step, lr_at_epoch, AdamState, TrainConfig};
use crate::scalar::Scalar;

/// Seed offset separating the shuffle stream from weight initialization.
const SHUFFLE_STREAM: u64 = 0x5eed_5eed_5eed_5eed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss (label units for the L1 baseline).
    pub loss: f64,
    pub lr: f64,
    /// Not serialized: histories written to disk must be reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory<T> {
    pub epochs: Vec<EpochRecord>,
    pub params: EncoderParams<T>,
    /// Batches dropped because every anchor was skipped.
    pub skipped_batches: usize,
}

impl<T> TrainHistory<T> {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// Equality ignoring wall-clock times.
    pub fn same_trajectory(&self, other: &Self) -> bool
    where
        T: PartialEq,
    {
        self.params == other.params
            && self.skipped_batches == other.skipped_batches
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch && a.loss.to_bits() == b.loss.to_bits() && a.lr == b.lr
            })
    }
}

/// Initial parameters for a training run: seeded weights plus standardization
/// fitted on the training data.
pub fn initial_params<T: Scalar>(
    features: &Matrix<T>,
    labels: &[T],
    arch: Architecture,
    seed: u64,
) -> Result<EncoderParams<T>> {
    let mut params = EncoderParams::init(arch, seed)?;
    params.fit_standardization(features)?;
    params.fit_target_standardization(labels)?;
    Ok(params)
}

fn batches(order: &[usize], batch_size: usize, drop_last: bool) -> impl Iterator<Item = &[usize]> {
    order
        .chunks(batch_size)
        .filter(move |c| !(drop_last && c.len() < batch_size) && !c.is_empty())
}

/// Trains from scratch. `labels` are continuous targets (age).
pub fn train<T: Scalar>(
    features: &Matrix<T>,
    labels: &[T],
    loss: &LossConfig<T>,
    cfg: &TrainConfig,
    arch: Architecture,
) -> Result<TrainHistory<T>> {
    let params = initial_params(features, labels, arch, cfg.seed)?;
    train_from(params, features, labels, loss, cfg)
}

/// Continues training from given parameters (standardization untouched).
pub fn train_from<T: Scalar>(
    mut params: EncoderParams<T>,
    features: &Matrix<T>,
    labels: &[T],
    loss: &LossConfig<T>,
    cfg: &TrainConfig,
) -> Result<TrainHistory<T>> {
    cfg.validate()?;
    loss.validate()?;
    let n = features.rows();
    if n == 0 {
        return Err(invalid("training split is empty"));
    }
    if labels.len() != n {
        return Err(invalid(format!(
            "{} labels for {n} training rows",
            labels.len()
        )));
    }
    let contrastive = loss.kind.is_contrastive();
    if contrastive && n < cfg.batch_size {
        return Err(invalid(format!(
            "{n} training rows cannot fill one batch of {}",
            cfg.batch_size
        )));
    }

    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut skipped_batches = 0;
    let scale = params.target_scale;
    let std_labels: Vec<T> = labels
        .iter()
        .map(|&y| (y - params.target_mean) / scale)
        .collect();

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = lr_at_epoch(cfg, epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in batches(&order, cfg.batch_size, contrastive) {
            let x = features.select_rows(batch);
            let (value, grads) = if contrastive {
                let y: Vec<T> = batch.iter().map(|&i| labels[i]).collect();
                let cache = params.forward_cached(&x)?;
                let res = match contrastive_loss(&cache.embeddings, &y, loss) {
                    Ok(r) => r,
                    Err(Error::DegenerateBatch(msg)) => {
                        log::debug!("epoch {epoch}: skipping batch ({msg})");
                        skipped_batches += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                (res.value.as_f64(), params.backward(&cache, &res.gradient))
            } else {
                let y: Vec<T> = batch.iter().map(|&i| std_labels[i]).collect();
                let (out, trunk) = params.regression_cached(&x)?;
                let res = l1_regression_loss(&out, &y)?;
                (
                    (res.value * scale).as_f64(),
                    params.regression_backward(&trunk, &res.gradient),
                )
            };
            if !value.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    reason: format!("loss became {value}"),
                });
            }
            adam_step(&mut params, &grads, &mut state, lr, cfg).map_err(|e| match e {
                Error::TrainingDiverged { reason, .. } => Error::TrainingDiverged { epoch, reason },
                other => other,
            })?;
            total += value;
            count += 1;
        }
        if !params.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                reason: "parameters became non-finite".into(),
            });
        }
        let loss_mean = if count > 0 {
            total / count as f64
        } else {
            f64::NAN
        };
        log::debug!("epoch {epoch}: loss {loss_mean:.6} lr {lr:.3e}");
        epochs.push(EpochRecord {
            epoch,
            loss: loss_mean,
            lr,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainHistory {
        epochs,
        params,
        skipped_batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use rand::Rng;

    /// Features linear in age plus small noise.
    fn linear_cohort(n: usize, seed: u64) -> (Matrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dirs: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ages: Vec<f64> = (0..n).map(|_| rng.random_range(20.0..80.0)).collect();
        let mut data = Vec::with_capacity(n * 6);
        for &a in &ages {
            for &d in &dirs {
                data.push(d * a / 50.0 + rng.random_range(-0.05..0.05));
            }
        }
        (Matrix::from_vec(n, 6, data).unwrap(), ages)
    }

    fn quick_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            initial_lr: 1e-3,
            epochs,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn arch() -> Architecture {
        Architecture {
            input_dim: 6,
            hidden: vec![16, 16],
            embedding_dim: 8,
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (x, y) = linear_cohort(64, 1);
        let cfg = quick_cfg(0);
        let h = train(&x, &y, &LossConfig::new(LossKind::Exp), &cfg, arch()).unwrap();
        assert!(h.epochs.is_empty());
        assert_eq!(h.params, initial_params(&x, &y, arch(), cfg.seed).unwrap());
    }

    #[test]
    fn exp_loss_descends() {
        let (x, y) = linear_cohort(256, 2);
        let loss = LossConfig::new(LossKind::Exp).with_sigma(5.0);
        let h = train(&x, &y, &loss, &quick_cfg(30), arch()).unwrap();
        let l = h.losses();
        assert_eq!(l.len(), 30);
        assert!(l[29] < l[0], "{l:?}");
        // median of the early epochs does not rise
        let med = |s: &[f64]| {
            let mut v = s.to_vec();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        assert!(med(&l[5..10]) <= med(&l[0..5]));
    }

    #[test]
    fn l1_baseline_learns_age() {
        let (x, y) = linear_cohort(256, 3);
        let h = train(
            &x,
            &y,
            &LossConfig::new(LossKind::L1Baseline),
            &quick_cfg(40),
            arch(),
        )
        .unwrap();
        let l = h.losses();
        assert!(l[39] < 0.5 * l[0], "{l:?}");
        let preds = h.params.predict_regression(&x).unwrap();
        let mae: f64 = preds
            .iter()
            .zip(&y)
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>()
            / y.len() as f64;
        assert!(mae < 5.0, "mae {mae}");
    }

    #[test]
    fn same_seed_same_history() {
        let (x, y) = linear_cohort(96, 4);
        let loss = LossConfig::new(LossKind::YAware);
        let a = train(&x, &y, &loss, &quick_cfg(3), arch()).unwrap();
        let b = train(&x, &y, &loss, &quick_cfg(3), arch()).unwrap();
        assert!(a.same_trajectory(&b));
        let c = train(
            &x,
            &y,
            &loss,
            &TrainConfig {
                seed: 8,
                ..quick_cfg(3)
            },
            arch(),
        )
        .unwrap();
        assert!(!a.same_trajectory(&c));
    }

    #[test]
    fn incomplete_batches() {
        let order: Vec<usize> = (0..70).collect();
        assert_eq!(batches(&order, 32, true).count(), 2);
        assert_eq!(batches(&order, 32, false).count(), 3);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, y) = linear_cohort(16, 5);
        let loss = LossConfig::new(LossKind::Exp);
        // fewer rows than one contrastive batch
        assert!(train(&x, &y, &loss, &quick_cfg(1), arch()).is_err());
        assert!(train(
            &x,
            &y[..3],
            &LossConfig::new(LossKind::L1Baseline),
            &quick_cfg(1),
            arch()
        )
        .is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let (x, y) = linear_cohort(64, 6);
        let cfg = TrainConfig {
            initial_lr: 1e300,
            ..quick_cfg(2)
        };
        let err = train(&x, &y, &LossConfig::new(LossKind::L1Baseline), &cfg, arch()).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { .. }), "{err}");
    }
}
