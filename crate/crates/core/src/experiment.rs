//! One run of the protocol: split a cohort, train an encoder, evaluate it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Group};
use crate::encoder::{Architecture, EncoderParams};
use crate::error::{invalid, Result};
use crate::eval::{
    bag_records_from_predictions, challenge_score, encode_labels, finetune_classifier,
    fit_ridge_readout, group_bag_stats, longitudinal_bag_slopes, mae, probe_bacc, r_squared,
    roc_auc, stratified_probe_folds, BagRecord, EvalReport, FinetuneConfig, ProbeConfig,
    RidgeReadout,
};
use crate::folds::{stratified_subject_folds, FoldAssignment};
use crate::kernel::KernelSpec;
use crate::linalg::Matrix;
use crate::losses::{LossConfig, LossKind};
use crate::optim::TrainConfig;
use crate::similarity::SimilarityConfig;
use crate::train::{train, TrainHistory};

const SUBSET_STREAM: u64 = 0x0005_ab5e_7000_0001;

/// Everything that defines a training run and its evaluation, apart from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub loss: LossKind,
    pub sigma: f64,
    pub temperature: f64,
    pub include_positive_in_denominator: bool,
    pub train: TrainConfig,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub n_folds: usize,
    pub test_fold: usize,
    pub fold_seed: u64,
    /// Sites never used for training; their rows give the external MAE.
    pub external_sites: Vec<String>,
    pub train_groups: Vec<Group>,
    /// Cap on training subjects, drawn as a seeded prefix so smaller sizes are
    /// subsets of larger ones.
    pub train_size: Option<usize>,
    pub ridge_lambda: f64,
    pub probe_folds: usize,
    pub probe_seed: u64,
    pub min_visits: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Exp,
            sigma: KernelSpec::<f64>::default().sigma,
            temperature: SimilarityConfig::<f64>::default().temperature,
            include_positive_in_denominator: false,
            train: TrainConfig::default(),
            hidden: vec![64, 64],
            embedding_dim: 32,
            n_folds: 5,
            test_fold: 0,
            fold_seed: 0,
            external_sites: Vec::new(),
            train_groups: vec![Group::Hc],
            train_size: None,
            ridge_lambda: crate::eval::DEFAULT_RIDGE_LAMBDA,
            probe_folds: 3,
            probe_seed: 0,
            min_visits: 3,
        }
    }
}

impl ExperimentConfig {
    /// Settings used by the synthetic benchmarks: a kernel about half the age
    /// range wide, a softer temperature, and a short schedule at a higher rate.
    pub fn benchmark(loss: LossKind) -> Self {
        Self {
            loss,
            sigma: 30.0,
            temperature: 0.2,
            train: TrainConfig {
                initial_lr: 1e-3,
                epochs: 50,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn loss_config(&self) -> LossConfig<f64> {
        LossConfig::new(self.loss)
            .with_sigma(self.sigma)
            .with_temperature(self.temperature)
            .with_positive_in_denominator(self.include_positive_in_denominator)
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.hidden.clone(),
            embedding_dim: self.embedding_dim,
        }
    }

    /// Uses `seed` for training, folds and probing alike.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.fold_seed = seed;
        self.probe_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.loss_config().validate()?;
        if self.test_fold >= self.n_folds {
            return Err(invalid(format!(
                "test_fold {} out of range for {} folds",
                self.test_fold, self.n_folds
            )));
        }
        if self.train_groups.is_empty() {
            return Err(invalid("train_groups must not be empty"));
        }
        if self.train_size == Some(0) {
            return Err(invalid("train_size must be positive"));
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(invalid("ridge_lambda must be non-negative"));
        }
        if self.probe_folds < 2 {
            return Err(invalid("probe_folds must be at least 2"));
        }
        Ok(())
    }
}

/// Row indices of the three evaluation partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub folds: FoldAssignment,
    pub train: Vec<usize>,
    /// Held-out subjects from training sites, every group and visit.
    pub internal: Vec<usize>,
    /// Every row from external sites.
    pub external: Vec<usize>,
}

pub fn make_split(cohort: &Cohort, cfg: &ExperimentConfig) -> Result<Split> {
    cfg.validate()?;
    let folds = stratified_subject_folds(cohort, cfg.n_folds, cfg.fold_seed)?;
    let is_external = |site: &str| cfg.external_sites.iter().any(|s| s == site);
    let mut candidates: Vec<&str> = Vec::new();
    let mut internal = Vec::new();
    let mut external = Vec::new();
    for (i, r) in cohort.rows().iter().enumerate() {
        if is_external(&r.site) {
            external.push(i);
        } else if folds.fold_of(&r.subject_id) == Some(cfg.test_fold) {
            internal.push(i);
        } else if cfg.train_groups.contains(&r.group) && r.visit_index == 0 {
            candidates.push(&r.subject_id);
        }
    }
    candidates.sort_unstable();
    candidates.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ SUBSET_STREAM);
    candidates.shuffle(&mut rng);
    if let Some(n) = cfg.train_size {
        if n > candidates.len() {
            return Err(invalid(format!(
                "train_size {n} exceeds the {} eligible training subjects",
                candidates.len()
            )));
        }
        candidates.truncate(n);
    }
    candidates.sort_unstable();
    let train: Vec<usize> = cohort
        .rows()
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            !is_external(&r.site)
                && cfg.train_groups.contains(&r.group)
                && candidates.binary_search(&r.subject_id.as_str()).is_ok()
        })
        .map(|(i, _)| i)
        .collect();
    if train.is_empty() {
        return Err(invalid("no training rows after filtering"));
    }
    Ok(Split {
        folds,
        train,
        internal,
        external,
    })
}

/// Trains the encoder of one run on the split's training rows.
pub fn train_run(
    cohort: &Cohort,
    split: &Split,
    cfg: &ExperimentConfig,
) -> Result<TrainHistory<f64>> {
    let x = cohort.features::<f64>(&split.train);
    let y = cohort.ages::<f64>(&split.train);
    train(
        &x,
        &y,
        &cfg.loss_config(),
        &cfg.train,
        cfg.architecture(cohort.feature_dim()),
    )
}

/// Frozen representation used for probing and ridge readout: unit embeddings
/// for contrastive models, last hidden layer for the regression baseline.
pub fn representation(
    params: &EncoderParams<f64>,
    kind: LossKind,
    x: &Matrix<f64>,
) -> Result<Matrix<f64>> {
    if kind.is_contrastive() {
        Ok(params.forward(x)?.into_matrix())
    } else {
        params.penultimate(x)
    }
}

/// Maps features to predicted ages.
#[derive(Debug, Clone)]
pub enum AgePredictor<'a> {
    Head(&'a EncoderParams<f64>),
    Readout(&'a EncoderParams<f64>, RidgeReadout<f64>),
}

impl AgePredictor<'_> {
    pub fn predict(&self, x: &Matrix<f64>) -> Result<Vec<f64>> {
        match self {
            AgePredictor::Head(p) => p.predict_regression(x),
            AgePredictor::Readout(p, r) => r.predict(&p.forward(x)?.into_matrix()),
        }
    }
}

/// The regression head for the baseline, a ridge readout on embeddings fitted to
/// the training rows otherwise.
pub fn age_predictor<'a>(
    cohort: &Cohort,
    split: &Split,
    params: &'a EncoderParams<f64>,
    cfg: &ExperimentConfig,
) -> Result<AgePredictor<'a>> {
    if !cfg.loss.is_contrastive() {
        return Ok(AgePredictor::Head(params));
    }
    let emb = params
        .forward(&cohort.features(&split.train))?
        .into_matrix();
    let readout = fit_ridge_readout(&emb, &cohort.ages(&split.train), cfg.ridge_lambda)?;
    Ok(AgePredictor::Readout(params, readout))
}

fn healthy(cohort: &Cohort, rows: &[usize]) -> Vec<usize> {
    rows.iter()
        .copied()
        .filter(|&i| cohort.rows()[i].group == Group::Hc)
        .collect()
}

/// Full evaluation of trained parameters on the split.
pub fn evaluate(
    cohort: &Cohort,
    split: &Split,
    params: &EncoderParams<f64>,
    cfg: &ExperimentConfig,
) -> Result<EvalReport> {
    let predictor = age_predictor(cohort, split, params, cfg)?;

    // age error on healthy held-out rows
    let int_hc = healthy(cohort, &split.internal);
    let ext_hc = healthy(cohort, &split.external);
    if int_hc.is_empty() {
        return Err(invalid("no healthy internal test rows"));
    }
    let truth_int = cohort.ages::<f64>(&int_hc);
    let pred_int = predictor.predict(&cohort.features(&int_hc))?;
    let mae_internal = mae(&pred_int, &truth_int)?;
    let r2 = r_squared(&pred_int, &truth_int).ok();
    let mae_external = if ext_hc.is_empty() {
        return Err(invalid("no healthy external rows; set external_sites"));
    } else {
        mae(
            &predictor.predict(&cohort.features(&ext_hc))?,
            &cohort.ages::<f64>(&ext_hc),
        )?
    };

    // site probe on internal held-out representations
    let rep = representation(params, cfg.loss, &cohort.features(&split.internal))?;
    let sites: Vec<&str> = split
        .internal
        .iter()
        .map(|&i| cohort.rows()[i].site.as_str())
        .collect();
    let (site_ids, site_names) = encode_labels(&sites);
    let probe_folds = stratified_probe_folds(&site_ids, cfg.probe_folds, cfg.probe_seed);
    let site_bacc = probe_bacc(&rep, &site_ids, &probe_folds, &ProbeConfig::default())?;
    let score = challenge_score(site_bacc, mae_external)?;

    // brain-age gap over every held-out row
    let held_out: Vec<usize> = split
        .internal
        .iter()
        .chain(&split.external)
        .copied()
        .collect();
    let preds = predictor.predict(&cohort.features(&held_out))?;
    let records = bag_records_from_predictions(&preds, cohort, &held_out)?;
    let baseline: Vec<BagRecord> = records
        .iter()
        .filter(|r| r.visit_index == 0)
        .cloned()
        .collect();
    let bag = group_bag_stats(&baseline);
    let hc_ad: Vec<&BagRecord> = baseline
        .iter()
        .filter(|r| matches!(r.group, Group::Hc | Group::Ad))
        .collect();
    let auc_hc_vs_ad = roc_auc(
        &hc_ad.iter().map(|r| r.bag).collect::<Vec<_>>(),
        &hc_ad
            .iter()
            .map(|r| r.group == Group::Ad)
            .collect::<Vec<_>>(),
    )
    .ok();
    let longitudinal = longitudinal_bag_slopes(&records, cfg.min_visits);

    let report = EvalReport {
        method: cfg.loss.name().to_string(),
        mae_internal,
        mae_external,
        r2,
        site_bacc,
        site_chance: 1.0 / site_names.len() as f64,
        challenge_score: score.value,
        challenge_degenerate: score.degenerate,
        bag,
        auc_hc_vs_ad,
        longitudinal,
        downstream_accuracy: None,
        n_train: split.train.len(),
        n_internal: split.internal.len(),
        n_external: split.external.len(),
    };
    report.validate()?;
    Ok(report)
}

/// Balanced accuracy of an HC-vs-AD classifier fine-tuned from `params`.
/// Trains on baseline visits of internal non-test subjects and tests on baseline
/// visits of the internal test fold.
pub fn downstream_hc_vs_ad(
    cohort: &Cohort,
    split: &Split,
    params: &EncoderParams<f64>,
    cfg: &ExperimentConfig,
    finetune: &FinetuneConfig,
) -> Result<f64> {
    let is_external = |site: &str| cfg.external_sites.iter().any(|s| s == site);
    let pick = |r: &crate::cohort::CohortRow| {
        r.visit_index == 0 && matches!(r.group, Group::Hc | Group::Ad)
    };
    let train_rows: Vec<usize> = cohort
        .rows()
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            pick(r)
                && !is_external(&r.site)
                && split.folds.fold_of(&r.subject_id) != Some(cfg.test_fold)
        })
        .map(|(i, _)| i)
        .collect();
    let test_rows: Vec<usize> = split
        .internal
        .iter()
        .copied()
        .filter(|&i| pick(&cohort.rows()[i]))
        .collect();
    let labels = |rows: &[usize]| -> Vec<bool> {
        rows.iter()
            .map(|&i| cohort.rows()[i].group == Group::Ad)
            .collect()
    };
    let out = finetune_classifier(
        params,
        &cohort.features(&train_rows),
        &labels(&train_rows),
        &cohort.features(&test_rows),
        &labels(&test_rows),
        finetune,
    )?;
    Ok(out.balanced_accuracy)
}

/// Output of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub history: TrainHistory<f64>,
    pub report: EvalReport,
}

pub fn run_experiment(cohort: &Cohort, cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let split = make_split(cohort, cfg)?;
    let history = train_run(cohort, &split, cfg)?;
    let report = evaluate(cohort, &split, &history.params, cfg)?;
    Ok(RunOutcome { history, report })
}
