//! End-to-end checks of the CSV layer and the command-line binary: file
//! errors that name their location, deterministic splits, archives that
//! round-trip bitwise, and each subcommand run as a real process.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use csvr::estimators::{fit_csvr, EstimatorSpec, Hyperparams, Method, PenaltyKind};
use csvr::io::{self, CsvSchema, ModelArchive};
use csvr::{Dataset, Shape};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_csvr"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("spawn csvr binary")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Concave-ish two-column sample written as `x,y` with a header.
fn write_sample_csv(path: &Path, n: usize) {
    let mut text = String::from("x,y\n");
    for i in 0..n {
        let x = 1.0 + 9.0 * (i as f64) / ((n - 1) as f64);
        let wiggle = 0.05 * ((i * 13 % 7) as f64 - 3.0) / 3.0;
        text.push_str(&format!("{},{}\n", x, 3.0 + x.sqrt() + wiggle));
    }
    fs::write(path, text).unwrap();
}

fn synthetic(n: usize) -> Dataset {
    let xs: Vec<f64> = (0..n).map(|i| (i % 17) as f64 + 0.5).collect();
    let ys: Vec<f64> = (0..n).map(|i| ((i * 31 + 7) % 23) as f64 * 0.3).collect();
    Dataset::from_flat(xs, ys, 1).unwrap()
}

#[test]
fn split_respects_documented_rounding() {
    let (train, test) = io::split(&synthetic(506), 0.2, 42).unwrap();
    assert_eq!((train.n(), test.n()), (405, 101));

    let (train, test) = io::split(&synthetic(473), 97.0 / 473.0, 42).unwrap();
    assert_eq!((train.n(), test.n()), (376, 97));

    // The two sides partition the original multiset of observations.
    let full = synthetic(506);
    let (train, test) = io::split(&full, 0.2, 9).unwrap();
    let mut seen: Vec<(u64, u64)> = train
        .y()
        .iter()
        .zip(train.x_flat())
        .chain(test.y().iter().zip(test.x_flat()))
        .map(|(y, x)| (y.to_bits(), x.to_bits()))
        .collect();
    let mut expected: Vec<(u64, u64)> =
        full.y().iter().zip(full.x_flat()).map(|(y, x)| (y.to_bits(), x.to_bits())).collect();
    seen.sort_unstable();
    expected.sort_unstable();
    assert_eq!(seen, expected);
}

#[test]
fn csv_errors_name_the_offending_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    // Headerless file, so file lines and data rows coincide; line 3 has a
    // blank second field.
    fs::write(&path, "1.0,2.0\n2.0,3.0\n3.0,\n4.0,5.0\n").unwrap();
    let err = io::load_csv(&path, &CsvSchema::default().headerless()).unwrap_err();
    let message = err.to_string();
    assert!(message.contains("row 3"), "error does not locate the bad cell: {message}");
}

#[test]
fn model_archives_round_trip_bitwise_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let data = synthetic(20);
    let model = fit_csvr(&data, Shape::concave(), 2.0, 0.05).unwrap();
    let spec = EstimatorSpec::new(
        Method::Csvr { penalty: PenaltyKind::SquaredL2 },
        Shape::concave(),
        Hyperparams { c: 2.0, epsilon: 0.05, lipschitz: None },
    );
    ModelArchive::from_model(&model, &spec, data.n()).save(&path).unwrap();

    let restored = ModelArchive::load(&path).unwrap().to_model().unwrap();
    let probe = [0.25, 3.75, 11.0];
    for x in probe {
        let a = model.predict(&[x]).unwrap();
        let b = restored.predict(&[x]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits(), "prediction at {x} changed across the archive");
    }
}

#[test]
fn fit_then_predict_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("data.csv");
    write_sample_csv(&data_path, 14);

    let fit_out = run(
        &[
            "fit",
            "data.csv",
            "--method",
            "csvr",
            "--c",
            "2",
            "--epsilon",
            "0.05",
            "--out",
            "model.json",
        ],
        dir.path(),
    );
    assert!(fit_out.status.success(), "fit failed: {}", stderr(&fit_out));
    assert!(stdout(&fit_out).contains("in-sample mse"), "report: {}", stdout(&fit_out));
    let archive_path = dir.path().join("model.json");
    assert!(archive_path.exists());

    let predict_out = run(&["predict", "data.csv", "--model", "model.json"], dir.path());
    assert!(predict_out.status.success(), "predict failed: {}", stderr(&predict_out));
    let text = stdout(&predict_out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("prediction"));
    let preds: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();
    assert_eq!(preds.len(), 14);

    // Printed predictions parse back to the archived model's exact output.
    let model = ModelArchive::load(&archive_path).unwrap().to_model().unwrap();
    let data = io::load_csv(&data_path, &CsvSchema::default()).unwrap();
    for (printed, direct) in preds.iter().zip(model.predict_rows(&data).unwrap()) {
        assert_eq!(printed.to_bits(), direct.to_bits());
    }
    // A response column present at predict time yields a held-out error note.
    assert!(stderr(&predict_out).contains("mse"), "stderr: {}", stderr(&predict_out));
}

#[test]
fn predict_accepts_feature_only_files() {
    let dir = tempfile::tempdir().unwrap();
    write_sample_csv(&dir.path().join("data.csv"), 12);
    let fit_out = run(&["fit", "data.csv", "--method", "cr"], dir.path());
    assert!(fit_out.status.success(), "{}", stderr(&fit_out));

    fs::write(dir.path().join("new.csv"), "x\n2.0\n5.5\n9.0\n").unwrap();
    let out = run(
        &["predict", "new.csv", "--model", "model.json", "--no-response"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 4, "header plus three predictions");
}

#[test]
fn cli_failures_use_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_sample_csv(&dir.path().join("data.csv"), 8);

    // Missing input file: io error.
    let out = run(&["fit", "absent.csv"], dir.path());
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("error[io]"), "{}", stderr(&out));

    // Unknown flag: usage error.
    let out = run(&["fit", "data.csv", "--frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    // Unparseable cell: parse error naming the location.
    fs::write(dir.path().join("bad.csv"), "x,y\n1,2\noops,3\n").unwrap();
    let out = run(&["fit", "bad.csv"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("row 3"), "{}", stderr(&out));

    // Unknown method name: parse error.
    let out = run(&["fit", "data.csv", "--method", "nope"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error["), "{}", stderr(&out));
}

#[test]
fn describe_reports_column_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    fs::write(&path, "a,label,b\n1.0,u,10.0\n2.0,v,20.0\n3.0,w,30.0\n").unwrap();

    let out = run(&["describe", "data.csv"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("a") && text.contains("b"));
    assert!(!text.contains("label"), "non-numeric column should be skipped: {text}");
    assert!(text.contains("2.00"), "mean of column a missing: {text}");

    let json_out = run(&["describe", "data.csv", "--json"], dir.path());
    let parsed: serde_json::Value = serde_json::from_slice(&json_out.stdout).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 2);
    assert_eq!(parsed[1]["mean"], 20.0);
}

#[test]
fn cv_reports_a_selected_candidate() {
    let dir = tempfile::tempdir().unwrap();
    write_sample_csv(&dir.path().join("data.csv"), 15);
    let out = run(
        &[
            "cv",
            "data.csv",
            "--method",
            "csvr",
            "--c-grid",
            "0.5,2",
            "--epsilon-grid",
            "0.01,0.1",
            "--folds",
            "3",
            "--seed",
            "1",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("selected"), "{}", stdout(&out));

    let json_out = run(
        &[
            "cv",
            "data.csv",
            "--method",
            "csvr",
            "--c-grid",
            "0.5,2",
            "--epsilon-grid",
            "0.01,0.1",
            "--folds",
            "3",
            "--seed",
            "1",
            "--json",
        ],
        dir.path(),
    );
    assert!(json_out.status.success(), "{}", stderr(&json_out));
    let parsed: serde_json::Value = serde_json::from_slice(&json_out.stdout).unwrap();
    assert!(parsed["selected"]["c"].is_number(), "{parsed}");
    assert_eq!(parsed["candidates"].as_array().unwrap().len(), 4);
}

#[test]
fn simulate_runs_a_miniature_study() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("study.toml"),
        r#"
replicates = 2
seed = 5

[[scenarios]]
dgp = "I"
n = 10
sigma = 0.5

[[estimators]]
method = "cr"
"#,
    )
    .unwrap();
    let out = run(&["simulate", "study.toml"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("dgp") && text.contains("cr"), "{text}");

    let json_out = run(&["simulate", "study.toml", "--json"], dir.path());
    assert!(json_out.status.success(), "{}", stderr(&json_out));
    let parsed: serde_json::Value = serde_json::from_slice(&json_out.stdout).unwrap();
    assert!(parsed["experiments"][0]["estimators"][0]["in_sample"]["mean"].is_number());
}

#[test]
fn oracle_check_dumps_a_program_description() {
    let dir = tempfile::tempdir().unwrap();
    write_sample_csv(&dir.path().join("data.csv"), 6);
    let out = run(
        &["oracle-check", "data.csv", "--method", "cr", "--out", "program.txt"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("program.txt")).unwrap();
    assert!(text.starts_with("conic-program v1"), "{}", &text[..text.len().min(80)]);
    assert!(text.trim_end().ends_with("end"));
}
