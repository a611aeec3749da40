//! Evaluation protocol: age readout, error metrics, site probing, brain-age gap
//! statistics and downstream classification.

pub mod auc;
pub mod bag;
pub mod finetune;
pub mod metrics;
pub mod probe;
pub mod report;
pub mod ridge;

pub use auc::{roc_auc, roc_curve};
pub use bag::{
    bag_records, bag_records_from_predictions, group_bag_stats, longitudinal_bag_slopes, BagRecord,
    BagSummary, GroupBagStats, LongitudinalSlopes,
};
pub use finetune::{finetune_classifier, FinetuneConfig, FinetuneOutcome};
pub use metrics::{
    challenge_score, mae, mae_accuracy_correlation, ols_slope, pearson, r_squared, ChallengeScore,
    MaeAccuracyCorrelation,
};
pub use probe::{
    balanced_accuracy, encode_labels, fit_logistic_probe, probe_bacc, site_probe_bacc,
    stratified_probe_folds, LogisticProbe, ProbeConfig,
};
pub use report::EvalReport;
pub use ridge::{fit_ridge_readout, predict_age, RidgeReadout, DEFAULT_RIDGE_LAMBDA};
