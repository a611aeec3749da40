//! Command implementations and the mapping from failures to exit codes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::Value;

use kwcontrast::eval::FinetuneConfig;
use kwcontrast::losses::LossKind;
use kwcontrast::sweep::{AxisValue, CellSummary, MeanStd, RunStatus, TrendRow};
use kwcontrast::train::EpochRecord;
use kwcontrast::{
    downstream_hc_vs_ad, evaluate as evaluate_split, generate_cohort, make_split, run_sweep,
    Checkpoint, Cohort, Error, EvalReport, ExperimentConfig, Group, SweepAxis, SweepSpec,
    SyntheticSpec,
};

use crate::config::{
    layered, read_config_file, take_key, take_path, EvaluateConfig, GenerateConfig, Preset,
    SweepConfig, TrainRunConfig,
};
use crate::{Common, EvaluateArgs, ExperimentArgs, GenerateArgs, ReportArgs, SweepArgs, TrainArgs};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_SWEEP_FAILED: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::TrainingDiverged { .. }) => EXIT_DIVERGED,
            _ => EXIT_INPUT,
        };
        Self { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

type CmdResult = Result<(), Failure>;

fn out_path(common: &Common, name: &Path) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(&common.out_dir).with_context(|| {
        format!(
            "cannot create output directory {}",
            common.out_dir.display()
        )
    })?;
    Ok(common.out_dir.join(name))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_cohort(path: &Path) -> anyhow::Result<Cohort> {
    Cohort::read_csv_file(path).with_context(|| format!("cannot load cohort {}", path.display()))
}

/// Sites held out from training when none are configured: the last fifth of
/// the sorted site names, rounded up, as in the generator.
fn default_external_sites(cohort: &Cohort) -> Vec<String> {
    let mut sites: Vec<String> = cohort.sites().into_iter().map(str::to_string).collect();
    sites.sort();
    sites.dedup();
    let n =
        ((sites.len() as f64) * SyntheticSpec::default().external_site_fraction).ceil() as usize;
    sites.split_off(sites.len() - n.min(sites.len()))
}

fn apply_experiment_args(cfg: &mut ExperimentConfig, common: &Common, a: &ExperimentArgs) {
    if let Some(seed) = common.seed {
        *cfg = cfg.clone().with_seed(seed);
    }
    if let Some(f) = a.folds {
        cfg.n_folds = f;
    }
    if let Some(f) = a.fold {
        cfg.test_fold = f;
    }
    if let Some(s) = &a.external_sites {
        cfg.external_sites = s.clone();
    }
    if let Some(n) = a.train_size {
        cfg.train_size = Some(n);
    }
}

#[derive(Serialize)]
struct GenerateMeta<'a> {
    config: &'a GenerateConfig,
    cohort: String,
    n_rows: usize,
    n_subjects: usize,
    sites: Vec<&'a str>,
    external_sites: Vec<String>,
    group_counts: BTreeMap<Group, usize>,
}

pub fn generate(common: &Common, a: &GenerateArgs) -> CmdResult {
    let mut file = read_config_file(common.config.as_deref())?;
    let file_preset: Option<Preset> = take_key(&mut file, "preset")
        .map(serde_json::from_value)
        .transpose()
        .context("invalid preset")?;
    let preset = a.preset.or(file_preset).unwrap_or_default();
    let mut synth: SyntheticSpec = layered(&preset.spec(), file)?;
    if let Some(s) = common.seed {
        synth.seed = s;
    }
    let overrides = [
        (a.subjects, &mut synth.n_subjects),
        (a.sites, &mut synth.n_sites),
        (a.visits, &mut synth.visits_per_subject),
        (a.feature_dim, &mut synth.feature_dim),
    ];
    for (flag, slot) in overrides {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if let Some(v) = a.site_strength {
        synth.site_effect_strength = v;
    }
    if let Some(v) = a.noise_std {
        synth.noise_std = v;
    }
    synth.validate()?;

    let cohort = generate_cohort(&synth)?;
    let path = out_path(common, &a.out)?;
    cohort
        .write_csv_file(&path)
        .with_context(|| format!("cannot write cohort to {}", path.display()))?;
    let cfg = GenerateConfig { preset, synth };
    let subjects = cohort.subjects().len();
    let meta = GenerateMeta {
        config: &cfg,
        cohort: path.display().to_string(),
        n_rows: cohort.len(),
        n_subjects: subjects,
        sites: cohort.sites(),
        external_sites: cfg.synth.external_sites(),
        group_counts: cohort.group_counts(),
    };
    write_json(&path.with_extension("json"), &meta)?;
    println!(
        "wrote {} rows for {} subjects to {}",
        cohort.len(),
        subjects,
        path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct HistoryFile<'a> {
    config: &'a TrainRunConfig,
    epochs: &'a [EpochRecord],
    skipped_batches: usize,
    n_train_rows: usize,
}

pub fn train(common: &Common, a: &TrainArgs) -> CmdResult {
    let mut file = read_config_file(common.config.as_deref())?;
    let cohort_path = a
        .cohort
        .clone()
        .or(take_path(&mut file, "cohort")?)
        .ok_or_else(|| {
            anyhow!("no cohort given; pass --cohort or set \"cohort\" in the config file")
        })?;
    let loss: LossKind = match &a.loss {
        Some(name) => name.parse()?,
        None => match file.get("loss") {
            Some(v) => serde_json::from_value(v.clone()).context("invalid loss")?,
            None => LossKind::Exp,
        },
    };
    let mut exp: ExperimentConfig = layered(&ExperimentConfig::benchmark(loss), file)?;
    exp.loss = loss;
    apply_experiment_args(&mut exp, common, &a.experiment);
    if let Some(v) = a.epochs {
        exp.train.epochs = v;
    }
    if let Some(v) = a.lr {
        exp.train.initial_lr = v;
    }
    if let Some(v) = a.batch_size {
        exp.train.batch_size = v;
    }
    if let Some(v) = a.sigma {
        exp.sigma = v;
    }
    if let Some(v) = a.temperature {
        exp.temperature = v;
    }
    exp.validate()?;

    let cohort = load_cohort(&cohort_path)?;
    if exp.external_sites.is_empty() {
        exp.external_sites = default_external_sites(&cohort);
    }
    let cfg = TrainRunConfig {
        cohort: cohort_path,
        experiment: exp,
    };
    let split = make_split(&cohort, &cfg.experiment)?;
    log::info!(
        "training {} on {} rows",
        cfg.experiment.loss,
        split.train.len()
    );
    let history = kwcontrast::experiment::train_run(&cohort, &split, &cfg.experiment)?;

    let ck = Checkpoint::new(
        cfg.experiment.loss_config(),
        cfg.experiment.train.clone(),
        history.params.clone(),
    )
    .with_experiment(cfg.experiment.clone());
    let ck_path = out_path(common, Path::new("checkpoint.json"))?;
    ck.save(&ck_path)
        .with_context(|| format!("cannot write checkpoint {}", ck_path.display()))?;
    write_json(
        &out_path(common, Path::new("history.json"))?,
        &HistoryFile {
            config: &cfg,
            epochs: &history.epochs,
            skipped_batches: history.skipped_batches,
            n_train_rows: split.train.len(),
        },
    )?;
    match history.epochs.last() {
        Some(last) => println!(
            "trained {} for {} epochs, final loss {:.6}; wrote {}",
            cfg.experiment.loss,
            history.epochs.len(),
            last.loss,
            ck_path.display()
        ),
        None => println!("wrote untrained initialization to {}", ck_path.display()),
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config: &'a EvaluateConfig,
    #[serde(flatten)]
    report: &'a EvalReport,
}

pub fn evaluate(common: &Common, a: &EvaluateArgs) -> CmdResult {
    let mut file = read_config_file(common.config.as_deref())?;
    let ck_path = a
        .checkpoint
        .clone()
        .or(take_path(&mut file, "checkpoint")?)
        .ok_or_else(|| {
            anyhow!(
                "no checkpoint given; pass --checkpoint or set \"checkpoint\" in the config file"
            )
        })?;
    let cohort_path = a
        .cohort
        .clone()
        .or(take_path(&mut file, "cohort")?)
        .ok_or_else(|| {
            anyhow!("no cohort given; pass --cohort or set \"cohort\" in the config file")
        })?;
    let downstream = match take_key(&mut file, "downstream") {
        Some(v) => serde_json::from_value::<bool>(v).context("\"downstream\" must be a boolean")?,
        None => false,
    } || a.downstream;

    let ck = Checkpoint::load(&ck_path)
        .with_context(|| format!("cannot load checkpoint {}", ck_path.display()))?;
    let defaults = ck
        .experiment
        .clone()
        .unwrap_or_else(|| ExperimentConfig::benchmark(ck.loss.kind));
    let mut exp: ExperimentConfig = layered(&defaults, file)?;
    exp.loss = ck.loss.kind;
    apply_experiment_args(&mut exp, common, &a.experiment);
    exp.validate()?;

    let cohort = load_cohort(&cohort_path)?;
    if cohort.feature_dim() != ck.params.arch.input_dim {
        return Err(anyhow!(
            "cohort has {} features but the checkpoint expects {}",
            cohort.feature_dim(),
            ck.params.arch.input_dim
        )
        .into());
    }
    if exp.external_sites.is_empty() {
        exp.external_sites = default_external_sites(&cohort);
    }
    let split = make_split(&cohort, &exp)?;
    let mut report = evaluate_split(&cohort, &split, &ck.params, &exp)?;
    if downstream {
        let mut ft = FinetuneConfig::default();
        ft.train.seed = exp.train.seed;
        report.downstream_accuracy =
            Some(downstream_hc_vs_ad(&cohort, &split, &ck.params, &exp, &ft)?);
        report.validate()?;
    }
    let cfg = EvaluateConfig {
        cohort: cohort_path,
        checkpoint: ck_path,
        downstream,
        experiment: exp,
    };
    let path = out_path(common, Path::new("report.json"))?;
    write_json(
        &path,
        &ReportFile {
            config: &cfg,
            report: &report,
        },
    )?;
    println!(
        "{}: mae_internal {:.3}, mae_external {:.3}, site_bacc {:.3} (chance {:.3}), challenge_score {:.3}; wrote {}",
        report.method,
        report.mae_internal,
        report.mae_external,
        report.site_bacc,
        report.site_chance,
        report.challenge_score,
        path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepMetadata {
    started_unix_s: f64,
    finished_unix_s: f64,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct SweepSummaryFile<'a> {
    config: &'a SweepConfig,
    axis: &'static str,
    n_cells: usize,
    n_failed: usize,
    cells: &'a [CellSummary],
    runs: &'a [RunStatus],
    /// The only part of any output that varies between identical invocations.
    metadata: SweepMetadata,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sweep(common: &Common, a: &SweepArgs) -> CmdResult {
    let mut file = read_config_file(common.config.as_deref())?;
    let file_jobs: Option<usize> = take_key(&mut file, "jobs")
        .map(serde_json::from_value)
        .transpose()
        .context("\"jobs\" must be a non-negative integer")?;
    let mut defaults = SweepSpec::default();
    if let Some(p) = a.preset {
        defaults.synth = p.spec();
    }
    let mut spec: SweepSpec = layered(&defaults, file)?;
    if let Some(p) = a.preset {
        let seed = spec.synth.seed;
        spec.synth = p.spec().with_seed(seed);
    }
    if let Some(axis) = &a.axis {
        spec.axis = serde_json::from_value(Value::String(axis.clone())).map_err(|_| {
            anyhow!("unknown axis '{axis}'; expected train_size, loss_kind, sigma or site_strength")
        })?;
    }
    if let Some(values) = &a.values {
        spec.values = values
            .iter()
            .map(|v| match v.parse::<f64>() {
                Ok(x) if spec.axis != SweepAxis::LossKind => AxisValue::Number(x),
                _ => AxisValue::Name(v.clone()),
            })
            .collect();
    }
    if let Some(seed) = common.seed {
        spec.seeds = vec![seed];
    }
    if let Some(seeds) = &a.seeds {
        spec.seeds = seeds.clone();
    }
    if let Some(losses) = &a.losses {
        spec.losses = losses.iter().map(|l| l.parse()).collect::<Result<_, _>>()?;
    }
    if let Some(e) = a.epochs {
        spec.base.train.epochs = e;
    }
    if let Some(n) = a.subjects {
        spec.synth.n_subjects = n;
    }
    let jobs = common.jobs.or(file_jobs).unwrap_or(1).max(1);
    spec.validate()?;
    let cfg = SweepConfig { jobs, spec };

    let started = unix_now();
    let clock = Instant::now();
    let outcome = run_sweep(&cfg.spec, jobs)?;
    let metadata = SweepMetadata {
        started_unix_s: started,
        finished_unix_s: unix_now(),
        wall_time_s: clock.elapsed().as_secs_f64(),
    };

    let trend_path = out_path(common, Path::new("trend.csv"))?;
    fs::write(&trend_path, outcome.trend_csv()?)
        .with_context(|| format!("cannot write {}", trend_path.display()))?;
    let n_failed = outcome.runs.iter().filter(|r| r.status != "ok").count();
    write_json(
        &out_path(common, Path::new("summary.json"))?,
        &SweepSummaryFile {
            config: &cfg,
            axis: kwcontrast::sweep::axis_name(cfg.spec.axis),
            n_cells: outcome.runs.len(),
            n_failed,
            cells: &outcome.summary,
            runs: &outcome.runs,
            metadata,
        },
    )?;
    println!(
        "{} of {} runs succeeded; wrote {}",
        outcome.runs.len() - n_failed,
        outcome.runs.len(),
        trend_path.display()
    );
    if !outcome.any_succeeded() {
        return Err(Failure {
            code: EXIT_SWEEP_FAILED,
            error: anyhow!("every sweep run failed; see summary.json"),
        });
    }
    Ok(())
}

fn read_trend(path: &Path) -> anyhow::Result<Vec<TrendRow>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<TrendRow>().enumerate() {
        // Row numbers count the header as row 1.
        rows.push(rec.with_context(|| format!("{}: bad trend row {}", path.display(), i + 2))?);
    }
    if rows.is_empty() {
        return Err(anyhow!("{} has no rows", path.display()));
    }
    Ok(rows)
}

fn axis_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

fn fmt_cell(m: Option<MeanStd>) -> String {
    m.map(|m| format!("{:.3} ± {:.3}", m.mean, m.std))
        .unwrap_or_else(|| "n/a".into())
}

/// Markdown table of per-(method, axis value) means and population stds.
fn markdown(rows: &[TrendRow], source: &Path) -> String {
    let mut keys: Vec<(String, String)> = rows
        .iter()
        .map(|r| (r.method.clone(), r.axis_value.clone()))
        .collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(axis_order(&a.1, &b.1)));
    keys.dedup();
    let mut out = format!("# Sweep report\n\nSource: `{}`\n\n", source.display());
    out.push_str("| method | axis value | seeds | mae_ext | site_bacc | auc | challenge_score |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for (method, value) in keys {
        let mine: Vec<&TrendRow> = rows
            .iter()
            .filter(|r| r.method == method && r.axis_value == value)
            .collect();
        let col = |f: &dyn Fn(&TrendRow) -> Option<f64>| {
            MeanStd::of(&mine.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
        };
        let _ = writeln!(
            out,
            "| {method} | {value} | {} | {} | {} | {} | {} |",
            mine.len(),
            fmt_cell(col(&|r| Some(r.mae_ext))),
            fmt_cell(col(&|r| Some(r.site_bacc))),
            fmt_cell(col(&|r| r.auc)),
            fmt_cell(col(&|r| Some(r.challenge_score))),
        );
    }
    out
}

pub fn report(common: &Common, a: &ReportArgs) -> CmdResult {
    let trend = a
        .trend
        .clone()
        .unwrap_or_else(|| common.out_dir.join("trend.csv"));
    let mut rows = read_trend(&trend)?;
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.seed.cmp(&b.seed))
            .then(axis_order(&a.axis_value, &b.axis_value))
    });

    let plot_path = out_path(common, Path::new("plot_data.csv"))?;
    let mut w = csv::Writer::from_path(&plot_path)
        .with_context(|| format!("cannot write {}", plot_path.display()))?;
    for r in &rows {
        w.serialize(r).context("cannot write plot data")?;
    }
    w.flush().context("cannot write plot data")?;

    let md = markdown(&rows, &trend);
    let md_path = out_path(common, Path::new("report.md"))?;
    fs::write(&md_path, &md).with_context(|| format!("cannot write {}", md_path.display()))?;
    print!("{md}");
    Ok(())
}
