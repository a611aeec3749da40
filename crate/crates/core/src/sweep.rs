//! Cross-product runs over one axis, seeds and loss kinds.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{invalid, Result};
use crate::eval::EvalReport;
use crate::experiment::{run_experiment, ExperimentConfig};
use crate::losses::LossKind;
use crate::synth::{generate_cohort, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TrainSize,
    LossKind,
    Sigma,
    SiteStrength,
}

/// A point on the sweep axis: a number, or a loss name for the `loss_kind` axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Number(f64),
    Name(String),
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisValue::Number(v) => write!(f, "{v}"),
            AxisValue::Name(s) => f.write_str(s),
        }
    }
}

impl AxisValue {
    fn number(&self, axis: SweepAxis) -> Result<f64> {
        match self {
            AxisValue::Number(v) if v.is_finite() => Ok(*v),
            AxisValue::Name(s) => s
                .parse::<f64>()
                .map_err(|_| invalid(format!("{axis:?} values must be numbers, got '{s}'"))),
            AxisValue::Number(v) => Err(invalid(format!("non-finite axis value {v}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<AxisValue>,
    pub seeds: Vec<u64>,
    /// Methods to run at every axis value; ignored on the `loss_kind` axis.
    pub losses: Vec<LossKind>,
    pub base: ExperimentConfig,
    pub synth: SyntheticSpec,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            axis: SweepAxis::TrainSize,
            values: [256.0, 512.0, 1024.0, 2048.0]
                .map(AxisValue::Number)
                .to_vec(),
            seeds: vec![0, 1, 2],
            losses: vec![LossKind::L1Baseline, LossKind::Exp],
            base: ExperimentConfig::benchmark(LossKind::Exp),
            synth: SyntheticSpec::healthy(),
        }
    }
}

/// One (method, axis value, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub method: LossKind,
    pub axis_value: AxisValue,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub synth: SyntheticSpec,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(invalid("a sweep needs at least two axis values"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("a sweep needs at least one seed"));
        }
        if self.axis != SweepAxis::LossKind && self.losses.is_empty() {
            return Err(invalid("a sweep needs at least one loss kind"));
        }
        self.synth.validate()?;
        self.cells().map(|_| ())
    }

    /// Expands the cross product in a fixed order: axis value, method, seed.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut cells = Vec::new();
        for value in &self.values {
            let methods: Vec<LossKind> = if self.axis == SweepAxis::LossKind {
                vec![value.to_string().parse()?]
            } else {
                self.losses.clone()
            };
            for &method in &methods {
                for &seed in &self.seeds {
                    let mut synth = self.synth.clone().with_seed(seed);
                    let mut config = ExperimentConfig {
                        loss: method,
                        ..self.base.clone()
                    }
                    .with_seed(seed);
                    match self.axis {
                        SweepAxis::TrainSize => {
                            let n = value.number(self.axis)?;
                            if n < 1.0 || n.fract() != 0.0 {
                                return Err(invalid(format!(
                                    "train size {n} is not a positive integer"
                                )));
                            }
                            config.train_size = Some(n as usize);
                        }
                        SweepAxis::Sigma => config.sigma = value.number(self.axis)?,
                        SweepAxis::SiteStrength => {
                            synth.site_effect_strength = value.number(self.axis)?;
                        }
                        SweepAxis::LossKind => {}
                    }
                    if config.external_sites.is_empty() {
                        config.external_sites = synth.external_sites();
                    }
                    config.validate()?;
                    cells.push(Cell {
                        method,
                        axis_value: value.clone(),
                        seed,
                        config,
                        synth,
                    });
                }
            }
        }
        Ok(cells)
    }
}

/// Row of the trend table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub method: String,
    pub axis_value: String,
    pub seed: u64,
    pub mae_ext: f64,
    pub site_bacc: f64,
    pub auc: Option<f64>,
    pub challenge_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub method: String,
    pub axis_value: String,
    pub seed: u64,
    /// `"ok"` or `"failed"`.
    pub status: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population mean and standard deviation; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Self { mean, std })
    }
}

/// Aggregate over the seeds of one (method, axis value) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub axis_value: String,
    pub succeeded: usize,
    pub failed: usize,
    pub mae_ext: Option<MeanStd>,
    pub site_bacc: Option<MeanStd>,
    pub auc: Option<MeanStd>,
    pub challenge_score: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<TrendRow>,
    pub runs: Vec<RunStatus>,
    pub reports: Vec<Option<EvalReport>>,
    pub summary: Vec<CellSummary>,
}

impl SweepOutcome {
    pub fn any_succeeded(&self) -> bool {
        self.runs.iter().any(|r| r.status == "ok")
    }

    /// Trend table as CSV.
    pub fn trend_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "axis_value",
            "seed",
            "mae_ext",
            "site_bacc",
            "auc",
            "challenge_score",
        ])
        .map_err(|e| invalid(e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.axis_value.clone(),
                r.seed.to_string(),
                r.mae_ext.to_string(),
                r.site_bacc.to_string(),
                r.auc.map(|a| a.to_string()).unwrap_or_default(),
                r.challenge_score.to_string(),
            ])
            .map_err(|e| invalid(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| invalid(e.to_string()))
    }
}

fn cohort_key(synth: &SyntheticSpec) -> (u64, u64) {
    (synth.seed, synth.site_effect_strength.to_bits())
}

/// Runs every cell. `jobs > 1` runs cells on that many threads; results keep
/// cell order either way.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<SweepOutcome> {
    spec.validate()?;
    let cells = spec.cells()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| invalid(format!("cannot start worker threads: {e}")))?;

    let mut specs: BTreeMap<(u64, u64), &SyntheticSpec> = BTreeMap::new();
    for c in &cells {
        specs.entry(cohort_key(&c.synth)).or_insert(&c.synth);
    }
    let cohorts: BTreeMap<(u64, u64), Result<Cohort>> = pool.install(|| {
        specs
            .into_par_iter()
            .map(|(k, s)| (k, generate_cohort(s)))
            .collect()
    });

    let run = |cell: &Cell| -> Result<EvalReport> {
        let cohort = cohorts[&cohort_key(&cell.synth)]
            .as_ref()
            .map_err(|e| invalid(format!("cohort generation failed: {e}")))?;
        log::info!(
            "sweep: {} at {} = {}, seed {}",
            cell.method,
            axis_name(spec.axis),
            cell.axis_value,
            cell.seed
        );
        Ok(run_experiment(cohort, &cell.config)?.report)
    };
    let results: Vec<Result<EvalReport>> = if jobs > 1 {
        pool.install(|| cells.par_iter().map(run).collect())
    } else {
        cells.iter().map(run).collect()
    };

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    for (cell, res) in cells.iter().zip(results) {
        let method = cell.method.name().to_string();
        let axis_value = cell.axis_value.to_string();
        match res {
            Ok(r) => {
                rows.push(TrendRow {
                    method: method.clone(),
                    axis_value: axis_value.clone(),
                    seed: cell.seed,
                    mae_ext: r.mae_external,
                    site_bacc: r.site_bacc,
                    auc: r.auc_hc_vs_ad,
                    challenge_score: r.challenge_score,
                });
                runs.push(RunStatus {
                    method,
                    axis_value,
                    seed: cell.seed,
                    status: "ok".into(),
                    error: None,
                });
                reports.push(Some(r));
            }
            Err(e) => {
                log::warn!("sweep cell failed: {e}");
                runs.push(RunStatus {
                    method,
                    axis_value,
                    seed: cell.seed,
                    status: "failed".into(),
                    error: Some(e.to_string()),
                });
                reports.push(None);
            }
        }
    }
    let summary = summarize(&cells, &runs, &rows);
    Ok(SweepOutcome {
        rows,
        runs,
        reports,
        summary,
    })
}

fn summarize(cells: &[Cell], runs: &[RunStatus], rows: &[TrendRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for c in cells {
        let k = (c.method.name().to_string(), c.axis_value.to_string());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, axis_value)| {
            let mine: Vec<&TrendRow> = rows
                .iter()
                .filter(|r| r.method == method && r.axis_value == axis_value)
                .collect();
            let failed = runs
                .iter()
                .filter(|r| r.method == method && r.axis_value == axis_value && r.status != "ok")
                .count();
            let col = |f: &dyn Fn(&TrendRow) -> Option<f64>| {
                MeanStd::of(&mine.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            CellSummary {
                succeeded: mine.len(),
                failed,
                mae_ext: col(&|r| Some(r.mae_ext)),
                site_bacc: col(&|r| Some(r.site_bacc)),
                auc: col(&|r| r.auc),
                challenge_score: col(&|r| Some(r.challenge_score)),
                method,
                axis_value,
            }
        })
        .collect()
}

pub fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::TrainSize => "train_size",
        SweepAxis::LossKind => "loss_kind",
        SweepAxis::Sigma => "sigma",
        SweepAxis::SiteStrength => "site_strength",
    }
}
