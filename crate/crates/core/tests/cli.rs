use std::path::Path;
use std::process::{Command, Output};

fn mfmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfmap")).args(["--threads", "1"]).args(args).output().unwrap()
}

fn simulate(dir: &Path) {
    let out = mfmap(&[
        "simulate", "--scenario", "nonlinear-map", "--grids", "3,6", "--n-train", "8", "--n-test", "4", "--seed", "5",
        "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn lines(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count()
}

#[test]
fn simulate_writes_the_expected_layout() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    assert_eq!(lines(&dir.path().join("locations.csv")), 1 + 9 + 36);
    assert_eq!(lines(&dir.path().join("train_f2.csv")), 1 + 8);
    assert_eq!(lines(&dir.path().join("test_f1.csv")), 1 + 4);
    assert_eq!(lines(&dir.path().join("truth_scores.csv")), 5);
    assert!(dir.path().join("provenance.json").exists());
}

#[test]
fn train_score_and_sample_from_a_data_directory() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let data = dir.path().to_str().unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let out = mfmap(&["train", "--data", data, "--epochs", "3", "--out", run_s]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint.json", "trace.csv", "ordering.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ck = run.join("checkpoint.json");
    let scores = dir.path().join("scores.csv");
    let out = mfmap(&["score", "--checkpoint", ck.to_str().unwrap(), "--data", data, "--out", scores.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("mean negative log score"));
    let samples = dir.path().join("draws");
    let out = mfmap(&[
        "sample", "--checkpoint", ck.to_str().unwrap(), "--count", "4", "--seed", "2", "--given-fidelities", "1",
        "--given-file", &format!("{data}/test_f1.csv"), "--out", samples.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // the checkpoint remembers where its training data lives
    let joint = dir.path().join("joint");
    let out = mfmap(&["sample", "--checkpoint", ck.to_str().unwrap(), "--count", "2", "--seed", "2", "--out", joint.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(lines(&joint.join("sample_f2.csv")), 1 + 2);
}

#[test]
fn config_file_supplies_missing_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    let out_dir = dir.path().join("sim");
    std::fs::write(
        &cfg,
        format!(r#"{{"scenario": "gaussian-exponential", "grids": [4], "n_train": 3, "n_test": 2, "seed": 1, "out": "{}"}}"#, out_dir.display()),
    )
    .unwrap();
    let out = mfmap(&["simulate", "--config", cfg.to_str().unwrap(), "--n-train", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(lines(&out_dir.join("train_f1.csv")), 1 + 5);
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let code = |args: &[&str]| mfmap(args).status.code().unwrap();
    assert_eq!(code(&["simulate", "--scenario", "nope", "--seed", "1", "--out", d]), 2);
    assert_eq!(code(&["train", "--data", d, "--epochs", "0", "--out", d]), 2);
    assert_eq!(code(&["train", "--data", &format!("{d}/missing"), "--out", d]), 1);
    assert_eq!(
        code(&["simulate", "--scenario", "block-average", "--grids", "5,10,25", "--seed", "1", "--out", d]),
        2
    );
    simulate(dir.path());
    std::fs::write(dir.path().join("train_f1.csv"), "1,2\n").unwrap();
    assert_eq!(code(&["train", "--data", d, "--out", d]), 3);
}
