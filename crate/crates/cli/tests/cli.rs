//! End-to-end behavior of the `defx` binary: artifact formats, config
//! precedence, and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn defx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defx"))
        .args(args)
        .output()
        .expect("spawn defx")
}

fn defx_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_defx"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn defx")
}

fn write_dataset(path: &Path, n: usize) {
    let defs = ["is defined as", "refers to", "means"];
    let mut body = String::new();
    for i in 0..n {
        let label = i % 2;
        if label == 1 {
            body.push_str(&format!("term w{i} {} w{} thing .\t1\n", defs[i % 3], i % 7));
        } else {
            body.push_str(&format!("w{} w{} w{} plain text .\t0\n", i % 5, i % 11, i % 3));
        }
    }
    std::fs::write(path, body).unwrap();
}

#[test]
fn prepare_strips_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("raw.tsv");
    std::fs::write(&input, "12 . X is Y .\t1\nNo number here .\t0\n").unwrap();
    let out1 = dir.path().join("prep1.tsv");
    let out2 = dir.path().join("prep2.tsv");

    let o = defx(&["prepare", "--input", input.to_str().unwrap(), "--output", out1.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(&out1).unwrap(),
        "X is Y .\t1\nNo number here .\t0\n"
    );

    // Running prepare on its own output changes nothing.
    let o = defx(&["prepare", "--input", out1.to_str().unwrap(), "--output", out2.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(
        std::fs::read_to_string(&out1).unwrap(),
        std::fs::read_to_string(&out2).unwrap()
    );

    // The audit sidecar exists and echoes the flags.
    let meta = std::fs::read_to_string(dir.path().join("prep1.tsv.meta.json")).unwrap();
    assert!(meta.contains("\"command\": \"prepare\""));
}

#[test]
fn prepare_subject_via_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bio.tsv");
    std::fs::write(&input, "Cells are small .\t1\n").unwrap();
    let sidecar = dir.path().join("subjects.tsv");
    std::fs::write(&sidecar, "bio.tsv\tbiology\n").unwrap();
    let out = dir.path().join("prep.tsv");

    let o = defx(&[
        "prepare",
        "--input",
        input.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--subjects",
        sidecar.to_str().unwrap(),
        "--add-subject",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        "biology Cells are small .\t1\n"
    );
}

#[test]
fn prepare_add_subject_without_source_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.tsv");
    std::fs::write(&input, "a b\t1\n").unwrap();
    let o = defx(&[
        "prepare",
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.path().join("y.tsv").to_str().unwrap(),
        "--add-subject",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn predict_line_count_matches_input() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.tsv");
    write_dataset(&train, 30);
    let bundle = dir.path().join("bundle");

    let o = defx(&[
        "train",
        "--input",
        train.to_str().unwrap(),
        "--model",
        "gcn_only",
        "--epochs",
        "3",
        "--lr",
        "0.02",
        "--seed",
        "1",
        "--set",
        "emb.dim=8",
        "--set",
        "gcn.d_gcn=4",
        "--model-out",
        bundle.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    // Unlabeled input with a different sentence count.
    let to_classify = dir.path().join("sentences.txt");
    std::fs::write(&to_classify, "one thing refers to another .\nplain words here .\nmore text .\n").unwrap();
    let pred = dir.path().join("pred.tsv");
    let o = defx(&[
        "predict",
        "--model",
        bundle.to_str().unwrap(),
        "--input",
        to_classify.to_str().unwrap(),
        "--output",
        pred.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let body = std::fs::read_to_string(&pred).unwrap();
    assert_eq!(body.lines().count(), 3);
    for line in body.lines() {
        let (_, label) = line.rsplit_once('\t').unwrap();
        assert!(label == "0" || label == "1");
    }
}

#[test]
fn cv_writes_metrics_fold_dump_and_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.tsv");
    write_dataset(&train, 40);
    let test = dir.path().join("test.tsv");
    write_dataset(&test, 8);
    let metrics = dir.path().join("metrics.json");
    let folds = dir.path().join("folds.tsv");
    let preds = dir.path().join("preds.tsv");

    let o = defx(&[
        "cv",
        "--input",
        train.to_str().unwrap(),
        "--model",
        "gcn_only",
        "--folds",
        "4",
        "--seed",
        "9",
        "--epochs",
        "2",
        "--lr",
        "0.02",
        "--set",
        "emb.dim=8",
        "--set",
        "gcn.d_gcn=4",
        "--metrics",
        metrics.to_str().unwrap(),
        "--fold-dump",
        folds.to_str().unwrap(),
        "--test",
        test.to_str().unwrap(),
        "--predictions",
        preds.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let metrics_body = std::fs::read_to_string(&metrics).unwrap();
    let json: serde_json::Value = serde_json::from_str(&metrics_body).unwrap();
    assert_eq!(json["per_fold"].as_array().unwrap().len(), 4);
    assert_eq!(json["config"]["model"], "gcn_only");
    assert_eq!(json["config"]["folds"], "4");
    assert_eq!(json["seed"], 9);

    // Fold dump: fold_index<TAB>comma-separated ids covering the dataset.
    let dump = std::fs::read_to_string(&folds).unwrap();
    assert_eq!(dump.lines().count(), 4);
    let total: usize = dump
        .lines()
        .map(|l| l.split_once('\t').unwrap().1.split(',').count())
        .sum();
    assert_eq!(total, 40);

    // Predictions: one line per test sentence.
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), 8);
    assert!(dir.path().join("preds.tsv.meta.json").exists());
}

#[test]
fn config_file_flags_and_env_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.tsv");
    write_dataset(&train, 20);
    let config = dir.path().join("run.conf");
    std::fs::write(&config, "# run config\nmodel = gcn_only\nepochs = 2\nlr = 0.02\nseed = 5\nemb.dim = 8\ngcn.d_gcn = 4\n").unwrap();
    let metrics = dir.path().join("m.json");

    // Flag --seed wins over config file and env.
    let o = defx_env(
        &[
            "train",
            "--input",
            train.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "77",
            "--metrics",
            metrics.to_str().unwrap(),
        ],
        &[("DEFX_SEED", "123")],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(json["seed"], 77);

    // Without the flag, the config file beats the env fallback.
    let o = defx_env(
        &[
            "train",
            "--input",
            train.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--metrics",
            metrics.to_str().unwrap(),
        ],
        &[("DEFX_SEED", "123")],
    );
    assert!(o.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(json["seed"], 5);

    // Without either, the env fallback applies.
    let o = defx_env(
        &[
            "train",
            "--input",
            train.to_str().unwrap(),
            "--model",
            "gcn_only",
            "--epochs",
            "2",
            "--lr",
            "0.02",
            "--set",
            "emb.dim=8",
            "--metrics",
            metrics.to_str().unwrap(),
        ],
        &[("DEFX_SEED", "123")],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(json["seed"], 123);
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.tsv");
    write_dataset(&train, 10);
    let config = dir.path().join("bad.conf");
    std::fs::write(&config, "no_such_knob = 3\n").unwrap();
    let o = defx(&[
        "train",
        "--input",
        train.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_knob"));
}

#[test]
fn exit_codes_for_data_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();

    // Missing input file: data error.
    let o = defx(&["train", "--input", "/nonexistent/x.tsv", "--model", "gcn_only"]);
    assert_eq!(o.status.code(), Some(2));

    // Malformed label: data error, message names file and line.
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "hello world\t2\n").unwrap();
    let o = defx(&["train", "--input", bad.to_str().unwrap(), "--model", "gcn_only"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.tsv") && err.contains("invalid label"), "{err}");

    // Precomputed encoder without --features: usage error.
    let train = dir.path().join("train.tsv");
    write_dataset(&train, 10);
    let o = defx(&[
        "cv",
        "--input",
        train.to_str().unwrap(),
        "--model",
        "joint",
        "--encoder",
        "precomputed",
    ]);
    assert_eq!(o.status.code(), Some(1));

    // Unknown flag: usage error.
    let o = defx(&["cv", "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(1));

    // Help exits 0.
    let o = defx(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

/// The documented default run: joint model, toy encoder, 5 epochs, lr 2e-5,
/// window 5, batch 16 — exactly the shipped defaults.
#[test]
fn default_flags_run_the_reference_config() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.tsv");
    write_dataset(&train, 20);
    let metrics = dir.path().join("m.json");
    let o = defx(&[
        "train",
        "--input",
        train.to_str().unwrap(),
        "--model",
        "joint",
        "--encoder",
        "toy",
        "--epochs",
        "5",
        "--lr",
        "2e-5",
        "--window",
        "5",
        "--metrics",
        metrics.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(json["config"]["model"], "joint");
    assert_eq!(json["config"]["encoder"], "toy");
    assert_eq!(json["config"]["epochs"], "5");
    assert_eq!(json["config"]["lr"], "0.00002");
    assert_eq!(json["config"]["window"], "5");
    assert_eq!(json["config"]["batch_size"], "16");
    assert_eq!(json["epoch_losses"].as_array().unwrap().len(), 5);
}

#[test]
fn errors_report_has_contract_shape() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.tsv");
    write_dataset(&train, 24);
    let bundle = dir.path().join("bundle");
    let o = defx(&[
        "train",
        "--input",
        train.to_str().unwrap(),
        "--model",
        "gcn_only",
        "--epochs",
        "3",
        "--lr",
        "0.02",
        "--seed",
        "4",
        "--set",
        "emb.dim=8",
        "--set",
        "gcn.d_gcn=4",
        "--model-out",
        bundle.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let report = dir.path().join("errors.tsv");
    let o = defx(&[
        "errors",
        "--model",
        bundle.to_str().unwrap(),
        "--input",
        train.to_str().unwrap(),
        "--top",
        "5",
        "--output",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let body = std::fs::read_to_string(&report).unwrap();
    let mut last_loss = f64::INFINITY;
    for (i, line) in body.lines().enumerate() {
        let fields: Vec<&str> = line.splitn(5, '\t').collect();
        assert_eq!(fields.len(), 5, "row {line:?}");
        assert_eq!(fields[0].parse::<usize>().unwrap(), i + 1);
        let loss: f64 = fields[1].parse().unwrap();
        assert!(loss <= last_loss && loss >= 0.0);
        last_loss = loss;
    }
    assert_eq!(body.lines().count(), 5);
}
