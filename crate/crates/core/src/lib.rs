//! Kernel-weighted contrastive learning for regression on continuous labels.

// Negated float comparisons in this crate also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cohort;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod folds;
pub mod kernel;
pub mod linalg;
pub mod losses;
pub mod optim;
pub mod scalar;
pub mod similarity;
pub mod sweep;
pub mod synth;
pub mod train;

pub use checkpoint::Checkpoint;
pub use cohort::{Cohort, CohortRow, Group};
pub use encoder::{Architecture, EncoderParams};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use experiment::{
    downstream_hc_vs_ad, evaluate, make_split, run_experiment, ExperimentConfig, RunOutcome, Split,
};
pub use kernel::{kernel_eval, weights_for_anchor, KernelFamily, KernelSpec, WeightVector};
pub use linalg::Matrix;
pub use losses::{
    contrastive_loss, contrastive_loss_with_weights, exp_loss, infonce_loss, l1_regression_loss,
    loss_gradient_check, threshold_loss, yaware_loss, LossConfig, LossKind, LossResult,
    WeightMatrix,
};
pub use optim::TrainConfig;
pub use scalar::Scalar;
pub use similarity::{
    normalize_rows, similarity_matrix, EmbeddingBatch, SimilarityConfig, SimilarityMatrix,
};
pub use sweep::{run_sweep, SweepAxis, SweepOutcome, SweepSpec};
pub use synth::{generate_cohort, SyntheticSpec};
pub use train::{train, TrainHistory};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type LossConfig64 = LossConfig<f64>;
pub type LossConfig32 = LossConfig<f32>;
