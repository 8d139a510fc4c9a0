use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lowrank_cli::analyze::read_analyze_csv;
use lowrank_cli::csvio::{read_ktraj_csv, read_ledger_csv, read_report_csv};

fn lowrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowrank")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn small_config(dir: &Path, method: &str) -> String {
    let path = dir.join(format!("{method}.json"));
    let json = format!(
        r#"{{
            "architecture": [
                {{"type": "conv", "out_channels": 4, "kernel": 3, "padding": 1}},
                {{"type": "relu"}},
                {{"type": "max_pool", "size": 2}},
                {{"type": "conv", "out_channels": 4, "kernel": 3, "padding": 1}},
                {{"type": "relu"}},
                {{"type": "max_pool", "size": 2}},
                {{"type": "flatten"}},
                {{"type": "linear", "out_features": 3}}
            ],
            "method": "{method}",
            "epsilon": 0.8,
            "trainable_layers": 2,
            "epochs": 2,
            "batch_size": 8,
            "seed": 5
        }}"#
    );
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn verify_passes_and_prints_a_table() {
    let out = lowrank(&["verify", "--suite", "analytics"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("suite"));
    assert!(text.contains("analytics"));
}

#[test]
fn analyze_emits_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("a.csv");
    let out = lowrank(&["analyze", "--shape", "16,8,8,12,12,12,12,3", "--k-grid", "1-16:5,1-8,3,2-4", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_analyze_csv(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 4 * 8 * 1 * 3);
    assert!(rows.iter().all(|r| r.snr == 25.0));

    let stdout = lowrank(&["analyze", "--shape", "16,8,8,12,12,12,12,3", "--k-grid", "1-16:5,1-8,3,2-4", "--out", "-"]);
    assert_eq!(stdout.stdout, fs::read(&csv).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let out = lowrank(&["analyze", "--shape", "1,2,3", "--k-grid", "1,1,1,1", "--out", "-"]);
    assert_eq!(out.status.code(), Some(2));
    let out = lowrank(&["analyze", "--shape", "2,2,2,2,2,2,2,1", "--k-grid", "1,1,1,1", "--epsilon", "1", "--out", "-"]);
    assert_eq!(out.status.code(), Some(2));
    let out = lowrank(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "hosvd");
    let typo = fs::read_to_string(&config).unwrap().replace("\"epochs\"", "\"epoch\"");
    fs::write(&config, typo).unwrap();
    let out = lowrank(&["train", "--config", &config, "--data", "synthetic", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));

    let out = Command::new(env!("CARGO_BIN_EXE_lowrank"))
        .args(["verify", "--suite", "analytics"])
        .env("LOWRANK_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_is_reproducible_from_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = lowrank(&[
        "gen-data", "--classes", "3", "--per-class", "16", "--size", "8", "--seed", "4", "--out", data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["train-images.idx", "train-labels.idx", "val-images.idx", "val-labels.idx"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }

    let config = small_config(dir.path(), "hosvd");
    let runs: Vec<_> = (0..2)
        .map(|i| {
            let out_dir = dir.path().join(format!("run{i}"));
            let out = lowrank(&["train", "--config", &config, "--data", data.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            out_dir
        })
        .collect();
    for f in ["report.csv", "ktraj.csv", "ledger.csv"] {
        assert_eq!(fs::read(runs[0].join(f)).unwrap(), fs::read(runs[1].join(f)).unwrap(), "{f} differs");
    }
    let report = read_report_csv(fs::File::open(runs[0].join("report.csv")).unwrap()).unwrap();
    assert_eq!(report.len(), 2);
    let ktraj = read_ktraj_csv(fs::File::open(runs[0].join("ktraj.csv")).unwrap()).unwrap();
    // Conv layer: four modes; linear layer: one, for each of two epochs.
    assert_eq!(ktraj.len(), 2 * 5);
    let ledger = read_ledger_csv(fs::File::open(runs[0].join("ledger.csv")).unwrap()).unwrap();
    // 48 samples in batches of 8, two records per step.
    assert_eq!(ledger.len(), 2 * 6 * 2);
}

#[test]
fn vanilla_training_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), "none");
    let json = fs::read_to_string(&config).unwrap().replace("\"epochs\": 2", "\"epochs\": 1");
    fs::write(&config, json).unwrap();
    let out_dir = dir.path().join("out");
    let out = lowrank(&["train", "--config", &config, "--data", "synthetic", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_report_csv(fs::File::open(out_dir.join("report.csv")).unwrap()).unwrap();
    assert_eq!(report[0].std_mem_bytes, 0.0);
    assert!(fs::read_to_string(out_dir.join("ktraj.csv")).unwrap().lines().count() == 1);
}
