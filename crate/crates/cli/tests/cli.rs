use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

use kwcontrast::experiment::make_split;
use kwcontrast::train::initial_params;
use kwcontrast::{Checkpoint, Cohort, ExperimentConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kwcontrast"))
}

fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .output()
        .expect("failed to launch kwcontrast")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "kwcontrast {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Default-preset cohort shared by the tests that only read it.
fn shared_cohort() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    let dir = DIR.get_or_init(|| {
        let d = TempDir::new().unwrap();
        ok(&["generate", "--out-dir", s(d.path())]);
        d
    });
    // Leaked on purpose: the directory lives for the whole test binary.
    Box::leak(dir.path().join("cohort.csv").into_boxed_path())
}

fn small_cohort(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "generate",
        "--preset",
        "clinical",
        "--subjects",
        "500",
        "--out-dir",
        s(dir),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    dir.join("cohort.csv")
}

fn validator(schema: &str) -> jsonschema::Validator {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas");
    let mut opts = jsonschema::options();
    for entry in fs::read_dir(&dir).unwrap() {
        let doc = read_json(&entry.unwrap().path());
        let id = doc["$id"].as_str().unwrap().to_string();
        opts.with_resource(id, jsonschema::Resource::from_contents(doc).unwrap());
    }
    opts.build(&read_json(&dir.join(schema))).unwrap()
}

fn assert_valid(schema: &str, doc: &Value) {
    let v = validator(schema);
    let errors: Vec<String> = v
        .iter_errors(doc)
        .map(|e| format!("{e} at {}", e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{schema}: {errors:#?}");
}

#[test]
fn generate_default_writes_one_row_per_subject_visit() {
    let cohort = Cohort::read_csv_file(shared_cohort()).unwrap();
    let spec = kwcontrast::SyntheticSpec::default();
    assert_eq!(cohort.len(), spec.n_subjects * spec.visits_per_subject);

    let dir = TempDir::new().unwrap();
    let out = ok(&[
        "generate",
        "--subjects",
        "40",
        "--visits",
        "3",
        "--out-dir",
        s(dir.path()),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("120 rows for 40 subjects"), "{text}");
    let meta = read_json(&dir.path().join("cohort.json"));
    assert_eq!(meta["n_rows"], 120);
    assert_valid("cohort-meta.schema.json", &meta);
}

#[test]
fn generate_is_byte_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        ok(&[
            "generate",
            "--seed",
            "7",
            "--subjects",
            "200",
            "--out-dir",
            s(d.path()),
        ]);
    }
    assert_eq!(
        fs::read(a.path().join("cohort.csv")).unwrap(),
        fs::read(b.path().join("cohort.csv")).unwrap()
    );
    let c = TempDir::new().unwrap();
    ok(&[
        "generate",
        "--seed",
        "8",
        "--subjects",
        "200",
        "--out-dir",
        s(c.path()),
    ]);
    assert_ne!(
        fs::read(a.path().join("cohort.csv")).unwrap(),
        fs::read(c.path().join("cohort.csv")).unwrap()
    );
}

#[test]
fn generate_rejects_bad_spec_and_unwritable_path() {
    let dir = TempDir::new().unwrap();
    let out = run(&["generate", "--subjects", "0", "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);

    let blocker = dir.path().join("not-a-dir");
    fs::write(&blocker, "x").unwrap();
    let out = run(&[
        "generate",
        "--subjects",
        "20",
        "--out-dir",
        s(&blocker.join("sub")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn config_file_values_sit_between_defaults_and_flags() {
    let dir = TempDir::new().unwrap();
    let cohort = small_cohort(dir.path(), &[]);
    let cfg = dir.path().join("train.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"cohort": "{}", "loss": "yaware", "train": {{"epochs": 3}}}}"#,
            s(&cohort)
        ),
    )
    .unwrap();

    let from_file = dir.path().join("file");
    ok(&["train", "--config", s(&cfg), "--out-dir", s(&from_file)]);
    let h = read_json(&from_file.join("history.json"));
    assert_eq!(h["epochs"].as_array().unwrap().len(), 3);
    assert_eq!(h["config"]["experiment"]["loss"], "yaware");
    // untouched keys keep their defaults
    assert_eq!(h["config"]["experiment"]["temperature"], 0.2);

    let from_flag = dir.path().join("flag");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--epochs",
        "2",
        "--loss",
        "threshold",
        "--out-dir",
        s(&from_flag),
    ]);
    let h = read_json(&from_flag.join("history.json"));
    assert_eq!(h["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(h["config"]["experiment"]["loss"], "threshold");
    assert_eq!(h["config"]["experiment"]["train"]["epochs"], 2);
}

#[test]
fn unknown_config_keys_are_input_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"n_subjcts": 10}"#).unwrap();
    assert_eq!(
        code(&run(&[
            "generate",
            "--config",
            s(&cfg),
            "--out-dir",
            s(dir.path())
        ])),
        2
    );
    fs::write(&cfg, "[1, 2]").unwrap();
    assert_eq!(
        code(&run(&[
            "generate",
            "--config",
            s(&cfg),
            "--out-dir",
            s(dir.path())
        ])),
        2
    );
    let missing = dir.path().join("missing.json");
    assert_eq!(
        code(&run(&[
            "generate",
            "--config",
            s(&missing),
            "--out-dir",
            s(dir.path())
        ])),
        2
    );
}

#[test]
fn train_thirty_epochs_on_default_cohort() {
    let dir = TempDir::new().unwrap();
    ok(&[
        "train",
        "--cohort",
        s(shared_cohort()),
        "--loss",
        "exp",
        "--epochs",
        "30",
        "--out-dir",
        s(dir.path()),
    ]);
    let history = read_json(&dir.path().join("history.json"));
    let epochs = history["epochs"].as_array().unwrap();
    assert_eq!(epochs.len(), 30);
    assert!(epochs.iter().all(|e| e.get("wall_time_s").is_none()));
    assert_valid("history.schema.json", &history);
    assert_valid(
        "checkpoint.schema.json",
        &read_json(&dir.path().join("checkpoint.json")),
    );

    // evaluation of the trained checkpoint
    ok(&[
        "evaluate",
        "--cohort",
        s(shared_cohort()),
        "--checkpoint",
        s(&dir.path().join("checkpoint.json")),
        "--out-dir",
        s(dir.path()),
    ]);
    let report = read_json(&dir.path().join("report.json"));
    assert_valid("report.schema.json", &report);
    let f = |k: &str| report[k].as_f64().unwrap();
    for k in ["mae_internal", "mae_external", "site_bacc"] {
        assert!(f(k).is_finite(), "{k}");
    }
    assert!((f("challenge_score") - f("site_bacc").powf(0.3) * f("mae_external")).abs() < 1e-12);
    assert_eq!(report["config"]["experiment"]["train"]["epochs"], 30);
    assert_eq!(
        report["config"]["experiment"]["external_sites"],
        serde_json::json!(["site08", "site09"])
    );
}

#[test]
fn train_is_byte_deterministic() {
    let dir = TempDir::new().unwrap();
    let cohort = small_cohort(dir.path(), &[]);
    let outs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for o in &outs {
        ok(&[
            "train",
            "--cohort",
            s(&cohort),
            "--epochs",
            "3",
            "--seed",
            "5",
            "--out-dir",
            s(o),
        ]);
    }
    for f in ["checkpoint.json", "history.json"] {
        assert_eq!(
            fs::read(outs[0].join(f)).unwrap(),
            fs::read(outs[1].join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn zero_epochs_checkpoint_equals_initialization() {
    let dir = TempDir::new().unwrap();
    let cohort_path = small_cohort(dir.path(), &[]);
    ok(&[
        "train",
        "--cohort",
        s(&cohort_path),
        "--epochs",
        "0",
        "--seed",
        "3",
        "--out-dir",
        s(dir.path()),
    ]);
    let ck = Checkpoint::load(dir.path().join("checkpoint.json")).unwrap();

    let cohort = Cohort::read_csv_file(&cohort_path).unwrap();
    let cfg: ExperimentConfig = ck.experiment.clone().unwrap();
    assert_eq!(cfg.train.seed, 3);
    let split = make_split(&cohort, &cfg).unwrap();
    let init = initial_params(
        &cohort.features::<f64>(&split.train),
        &cohort.ages::<f64>(&split.train),
        cfg.architecture(cohort.feature_dim()),
        cfg.train.seed,
    )
    .unwrap();
    assert_eq!(ck.params, init);
    let history = read_json(&dir.path().join("history.json"));
    assert!(history["epochs"].as_array().unwrap().is_empty());
}

#[test]
fn corrupt_csv_reports_row_number() {
    let dir = TempDir::new().unwrap();
    let cohort = small_cohort(dir.path(), &[]);
    let text = fs::read_to_string(&cohort).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    // line 5 of the file (the header is row 1): replace the age field
    let mut fields: Vec<&str> = lines[4].split(',').collect();
    fields[4] = "forty";
    lines[4] = fields.join(",");
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, lines.join("\n") + "\n").unwrap();

    let out = run(&[
        "train",
        "--cohort",
        s(&bad),
        "--epochs",
        "1",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 5"), "{err}");
}

#[test]
fn missing_inputs_are_input_errors() {
    let dir = TempDir::new().unwrap();
    let cohort = small_cohort(dir.path(), &[]);
    let missing = dir.path().join("nope.json");
    let out = run(&[
        "evaluate",
        "--cohort",
        s(&cohort),
        "--checkpoint",
        s(&missing),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&run(&["train", "--out-dir", s(dir.path())])), 2);
    assert_eq!(
        code(&run(&[
            "train",
            "--cohort",
            s(&missing),
            "--out-dir",
            s(dir.path())
        ])),
        2
    );
    assert_eq!(
        code(&run(&[
            "train",
            "--cohort",
            s(&cohort),
            "--fold",
            "9",
            "--out-dir",
            s(dir.path())
        ])),
        2
    );
}

#[test]
fn divergence_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let cohort = small_cohort(dir.path(), &[]);
    let out = run(&[
        "train",
        "--cohort",
        s(&cohort),
        "--loss",
        "l1",
        "--lr",
        "1e300",
        "--epochs",
        "2",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn healthy_cohort_flags_missing_groups() {
    let dir = TempDir::new().unwrap();
    let cohort = dir.path().join("cohort.csv");
    ok(&[
        "generate",
        "--preset",
        "healthy",
        "--subjects",
        "1000",
        "--out-dir",
        s(dir.path()),
    ]);
    ok(&[
        "train",
        "--cohort",
        s(&cohort),
        "--epochs",
        "2",
        "--out-dir",
        s(dir.path()),
    ]);
    ok(&[
        "evaluate",
        "--cohort",
        s(&cohort),
        "--checkpoint",
        s(&dir.path().join("checkpoint.json")),
        "--out-dir",
        s(dir.path()),
    ]);
    let report = read_json(&dir.path().join("report.json"));
    assert_valid("report.schema.json", &report);
    let groups: Vec<&String> = report["bag"]["groups"]
        .as_object()
        .unwrap()
        .keys()
        .collect();
    assert_eq!(groups, vec!["HC"]);
    assert_eq!(
        report["bag"]["omitted"],
        serde_json::json!(["sMCI", "pMCI", "AD"])
    );
    assert!(report["auc_hc_vs_ad"].is_null());
}

#[test]
fn evaluate_with_downstream_fills_accuracy() {
    let dir = TempDir::new().unwrap();
    let cohort = small_cohort(dir.path(), &[]);
    ok(&[
        "train",
        "--cohort",
        s(&cohort),
        "--epochs",
        "2",
        "--out-dir",
        s(dir.path()),
    ]);
    ok(&[
        "evaluate",
        "--cohort",
        s(&cohort),
        "--checkpoint",
        s(&dir.path().join("checkpoint.json")),
        "--downstream",
        "--out-dir",
        s(dir.path()),
    ]);
    let report = read_json(&dir.path().join("report.json"));
    assert_valid("report.schema.json", &report);
    let acc = report["downstream_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

fn strip_metadata(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("metadata");
    v
}

#[test]
fn sweep_writes_one_row_per_cell_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let sweep_args = |out: &Path, jobs: &str| {
        ok(&[
            "sweep",
            "--axis",
            "train_size",
            "--values",
            "256,512,1024,2048",
            "--seeds",
            "0,1,2",
            "--losses",
            "l1,exp",
            "--epochs",
            "1",
            "--jobs",
            jobs,
            "--out-dir",
            s(out),
        ]);
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    sweep_args(&a, "1");
    sweep_args(&b, "3");

    let trend = fs::read_to_string(a.join("trend.csv")).unwrap();
    let mut lines = trend.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,axis_value,seed,mae_ext,site_bacc,auc,challenge_score"
    );
    assert_eq!(lines.count(), 24);
    assert_eq!(trend, fs::read_to_string(b.join("trend.csv")).unwrap());

    let sa = read_json(&a.join("summary.json"));
    let sb = read_json(&b.join("summary.json"));
    assert_valid("sweep-summary.schema.json", &sa);
    assert_eq!(sa["n_cells"], 24);
    assert_eq!(sa["cells"].as_array().unwrap().len(), 8);
    // only the jobs echo and the metadata block differ
    let mut sb = strip_metadata(sb);
    sb["config"]["jobs"] = sa["config"]["jobs"].clone();
    assert_eq!(strip_metadata(sa), sb);

    ok(&["report", "--out-dir", s(&a)]);
    let plot = fs::read_to_string(a.join("plot_data.csv")).unwrap();
    let rows: Vec<&str> = plot.lines().skip(1).collect();
    assert_eq!(rows.len(), 24);
    assert!(rows[0].starts_with("exp,256,0,"), "{}", rows[0]);
    assert!(rows[3].starts_with("exp,2048,0,"), "{}", rows[3]);
    let md = fs::read_to_string(a.join("report.md")).unwrap();
    assert!(md.contains("| l1 | 2048 | 3 |"), "{md}");
}

#[test]
fn sweep_with_every_run_failing_exits_with_four() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "sweep",
        "--values",
        "100000,200000",
        "--seeds",
        "0",
        "--losses",
        "exp",
        "--subjects",
        "300",
        "--epochs",
        "1",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("summary.json"));
    assert_valid("sweep-summary.schema.json", &summary);
    assert_eq!(summary["n_failed"], 2);
    assert!(summary["runs"][0]["error"]
        .as_str()
        .unwrap()
        .contains("train_size"));
}

#[test]
fn sweep_rejects_single_axis_value() {
    let dir = TempDir::new().unwrap();
    let out = run(&["sweep", "--values", "256", "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn report_rejects_malformed_trend() {
    let dir = TempDir::new().unwrap();
    let trend = dir.path().join("trend.csv");
    fs::write(
        &trend,
        "method,axis_value,seed,mae_ext,site_bacc,auc,challenge_score\nexp,256,zero,1,0.1,,1\n",
    )
    .unwrap();
    let out = run(&["report", "--trend", s(&trend), "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}
