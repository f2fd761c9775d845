use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config")
}

/// Writes a pipeline config into `dir` pointing at the shipped rule files,
/// with a small forest so the tests stay quick.
fn write_config(dir: &Path, extra_paths: &str, extra: &str) -> PathBuf {
    let c = config_dir().canonicalize().unwrap();
    let text = format!(
        r#"seed = 7
tz_offset_minutes = 330

[paths]
label_rules = "{rules}"
fuzzy = "{fuzzy}"
profile = "{profile}"
{extra_paths}

[clustering]
k = 7
{extra}

[forest]
ntree = 40

[evaluate]
folds = 5

[generate]
journeys = 1
"#,
        rules = c.join("label_rules.toml").display(),
        fuzzy = c.join("fuzzy.toml").display(),
        profile = c.join("profile.json").display(),
    );
    let path = dir.join("pipeline.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(config: Option<&Path>, out: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ecodrive"));
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.arg("--out").arg(out).args(args);
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        stdout(&o),
        stderr(&o)
    );
    o
}

/// Generates one journey and runs ingest and cluster.
fn prepared(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = write_config(dir, "", "");
    let out = dir.join("out");
    ok(run(Some(&cfg), &out, &["generate"]));
    ok(run(Some(&cfg), &out, &["ingest"]));
    ok(run(Some(&cfg), &out, &["cluster"]));
    (cfg, out)
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        None,
        dir.path(),
        &["ingest", "--input", "does/not/exist.csv"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not found"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "sed = 3\n").unwrap();
    let o = run(Some(&cfg), dir.path(), &["ingest"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_rows_are_counted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "");
    let out = dir.path().join("out");
    ok(run(Some(&cfg), &out, &["generate"]));
    let csv_path = out.join("telemetry.csv");
    let text = fs::read_to_string(&csv_path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let cols = lines[0].split(',').count();
    let bad = [
        "2021-03-01T01:00:05Z,not-a-number".to_string() + &",0".repeat(cols - 2),
        "garbage".to_string(),
        "2021-03-01T01:00:06Z,79.86,6.93,0,5,0,fast,0,1,13.7,300,0".to_string(),
    ];
    for (i, b) in bad.iter().enumerate() {
        lines.insert(2 + 3 * i, b);
    }
    fs::write(&csv_path, lines.join("\n") + "\n").unwrap();
    let o = ok(run(Some(&cfg), &out, &["ingest"]));
    assert!(
        stdout(&o).contains("3 rows rejected (3 malformed"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn small_journeys_warn_and_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = prepared(dir.path());
    let report = fs::read_to_string(out.join("cluster_report.tsv")).unwrap();

    let cfg = write_config(dir.path(), "", "min_events = 100000");
    let o = ok(run(Some(&cfg), &out, &["cluster"]));
    assert!(stderr(&o).contains("warning:"), "{}", stderr(&o));

    let row: Vec<&str> = report.lines().nth(1).unwrap().split('\t').collect();
    let (journey, cluster, label) = (row[0], row[1], row[9]);
    let flipped = if label == "Efficient" {
        "Inefficient"
    } else {
        "Efficient"
    };
    let ov = dir.path().join("overrides.csv");
    fs::write(
        &ov,
        format!("# manual review\n{journey},{cluster},{flipped}\n"),
    )
    .unwrap();
    let cfg = write_config(dir.path(), &format!("overrides = \"{}\"", ov.display()), "");
    ok(run(Some(&cfg), &out, &["cluster"]));
    let report = fs::read_to_string(out.join("cluster_report.tsv")).unwrap();
    let row: Vec<&str> = report.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!((row[0], row[1], row[9]), (journey, cluster, flipped));
}

#[test]
fn train_echoes_parameters_and_rejects_unlabeled_input() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = prepared(dir.path());
    let o = ok(run(None, &out, &["train"]));
    let s = stdout(&o);
    assert!(s.contains("ntree=500") && s.contains("mtry=3"), "{s}");
    assert!(s.contains("OOB error:"), "{s}");
    assert!(out.join("model.json").is_file());

    let o = run(
        None,
        &out,
        &[
            "train",
            "--labeled",
            out.join("events.jsonl").to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn evaluate_reports_every_statistic() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = prepared(dir.path());
    ok(run(Some(&cfg), &out, &["evaluate", "--folds", "4"]));
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(v["folds"], 4);
    for key in [
        "accuracy",
        "kappa",
        "mean_absolute_error",
        "root_mean_squared_error",
        "relative_absolute_error",
        "root_relative_squared_error",
        "precision",
        "recall",
        "confusion_matrix",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }

    // Fewer labeled events than folds.
    let labeled = fs::read_to_string(out.join("labeled_events.jsonl")).unwrap();
    let tiny = dir.path().join("tiny.jsonl");
    let mut kept = String::new();
    for label in ["\"Efficient\"", "\"Inefficient\""] {
        for l in labeled.lines().filter(|l| l.contains(label)).take(2) {
            kept.push_str(l);
            kept.push('\n');
        }
    }
    fs::write(&tiny, kept).unwrap();
    let o = run(
        Some(&cfg),
        &out,
        &[
            "evaluate",
            "--labeled",
            tiny.to_str().unwrap(),
            "--folds",
            "10",
        ],
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn replay_and_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = prepared(dir.path());
    ok(run(Some(&cfg), &out, &["train"]));
    let o = ok(run(Some(&cfg), &out, &["replay"]));
    let n_events = fs::read_to_string(out.join("events.jsonl"))
        .unwrap()
        .lines()
        .count();
    let n_decisions = fs::read_to_string(out.join("decisions.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(n_events, n_decisions);
    assert!(stdout(&o).contains(&format!("{n_events} decisions")));

    ok(run(Some(&cfg), &out, &["simulate"]));
    let v: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("savings.json")).unwrap()).unwrap();
    let gain = v["overall"]["efficiency_gain_percent"].as_f64().unwrap();
    assert!(gain >= 0.0, "{gain}");
    let table = fs::read_to_string(out.join("savings_table.csv")).unwrap();
    assert_eq!(table.lines().count(), n_events + 1);
}

#[test]
fn generate_is_seeded_and_validates_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(run(Some(&cfg), &a, &["generate", "--journeys", "2"]));
    ok(run(Some(&cfg), &b, &["generate", "--journeys", "2"]));
    for f in ["telemetry.csv", "weather_fixtures.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let c = dir.path().join("c");
    ok(run(
        Some(&cfg),
        &c,
        &["generate", "--journeys", "2", "--seed", "8"],
    ));
    assert_ne!(
        fs::read(a.join("telemetry.csv")).unwrap(),
        fs::read(c.join("telemetry.csv")).unwrap()
    );

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"route": [], "cruise_speed": -5}"#).unwrap();
    let o = run(
        Some(&cfg),
        &a,
        &["generate", "--profile", bad.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn generated_telemetry_ingests_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "");
    let out = dir.path().join("out");
    let o = ok(run(Some(&cfg), &out, &["generate", "--journeys", "2"]));
    let records: usize = stdout(&o)
        .lines()
        .next()
        .and_then(|l| l.split(", ").nth(1))
        .and_then(|s| s.trim_end_matches(" records").parse().ok())
        .unwrap();
    let o = ok(run(Some(&cfg), &out, &["ingest"]));
    let s = stdout(&o);
    assert!(s.contains(&format!("{records} records accepted")), "{s}");
    assert!(s.contains("0 rows rejected"), "{s}");
    assert!(s.contains("2 journeys"), "{s}");
}
