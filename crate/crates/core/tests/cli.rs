use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mhgcn::ingest::{load_dataset, DatasetPaths};
use mhgcn::training::init_params;
use mhgcn::{checkpoint, Task, TrainConfig};

const TOY_META: &str = "n 4 m 2 num_edge_types 2 num_node_types 2\n0 0\n1 0\n2 1\n3 1\n";
const TOY_EDGES: &str = "0\t2\t0\n1\t2\t0\n0\t2\t1\n0\t3\t1\n1\t3\t1\n";
const TOY_FEATURES: &str = "0\t1\t0\n1\t0\t1\n2\t1\t1\n3\t0.5\t-0.5\n";

fn mhgcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhgcn"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mhgcn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn toy_dir(root: &Path) -> PathBuf {
    let dir = root.join("toy");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("meta.tsv"), TOY_META).unwrap();
    fs::write(dir.join("edges.tsv"), TOY_EDGES).unwrap();
    fs::write(dir.join("features.tsv"), TOY_FEATURES).unwrap();
    dir
}

fn synth_dir(root: &Path, nodes: usize, seed: u64) -> PathBuf {
    let dir = root.join(format!("synth-{nodes}-{seed}"));
    ok(&["synth", "--out", s(&dir), "--nodes", &nodes.to_string(), "--seed", &seed.to_string()]);
    dir
}

#[test]
fn toy_link_training_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_dir(tmp.path());
    let out = tmp.path().join("run");
    let stdout = ok(&[
        "train", "--data", s(&data), "--task", "link", "--dim", "4", "--epochs", "10", "--out", s(&out),
    ]);
    assert!(stdout.contains("seed 0: best epoch"));
    for f in ["metrics.tsv", "manifest.json", "seed-0/checkpoint.tsv", "seed-0/history.tsv", "seed-0/manifest.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let history = fs::read_to_string(out.join("seed-0/history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 11);
}

#[test]
fn zero_epochs_saves_the_initial_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_dir(tmp.path(), 40, 1);
    let out = tmp.path().join("run");
    ok(&[
        "train", "--data", s(&data), "--task", "node", "--dim", "6", "--epochs", "0", "--seed", "3", "--out", s(&out),
    ]);
    let saved = checkpoint::load(&out.join("seed-3/checkpoint.tsv")).unwrap();
    let g = load_dataset(&DatasetPaths::in_dir(&data)).unwrap();
    let mut config = TrainConfig::new(Task::Node);
    config.dim = 6;
    config.epochs = 0;
    config.seed = 3;
    assert_eq!(saved, init_params(&g, &config).unwrap());
}

#[test]
fn frozen_beta_stays_at_one_and_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_dir(tmp.path(), 40, 2);
    let out = tmp.path().join("run");
    ok(&[
        "train", "--data", s(&data), "--task", "node", "--dim", "6", "--epochs", "15", "--ablation", "freeze_beta",
        "--out", s(&out),
    ]);
    let params = checkpoint::load(&out.join("seed-0/checkpoint.tsv")).unwrap();
    assert_eq!(params.beta, vec![1.0; params.beta.len()]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["ablation"], "freeze_beta");
}

#[test]
fn eval_of_a_run_reproduces_its_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_dir(tmp.path(), 40, 3);
    let out = tmp.path().join("run");
    ok(&[
        "train", "--data", s(&data), "--task", "link", "--dim", "6", "--epochs", "10", "--seeds", "2", "--out", s(&out),
    ]);
    let again = tmp.path().join("again.tsv");
    ok(&["eval", "--run", s(&out), "--out", s(&again)]);
    assert_eq!(fs::read_to_string(again).unwrap(), fs::read_to_string(out.join("metrics.tsv")).unwrap());
}

#[test]
fn manifest_replay_is_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_dir(tmp.path(), 40, 4);
    let first = tmp.path().join("first");
    ok(&[
        "train", "--data", s(&data), "--task", "node", "--dim", "6", "--epochs", "12", "--normalize", "--out",
        s(&first),
    ]);
    let second = tmp.path().join("second");
    ok(&["train", "--manifest", s(&first.join("manifest.json")), "--out", s(&second)]);
    for f in ["metrics.tsv", "manifest.json", "seed-0/checkpoint.tsv", "seed-0/history.tsv", "seed-0/metrics.tsv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn replay_rejects_changed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_dir(tmp.path());
    let first = tmp.path().join("first");
    ok(&["train", "--data", s(&data), "--task", "link", "--dim", "3", "--epochs", "2", "--out", s(&first)]);
    fs::write(data.join("features.tsv"), TOY_FEATURES.replace("0.5", "0.25")).unwrap();
    let out = mhgcn(&["train", "--manifest", s(&first.join("manifest.json")), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn multi_seed_runs_report_mean_and_std() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_dir(tmp.path(), 40, 5);
    let out = tmp.path().join("run");
    let stdout = ok(&[
        "train", "--data", s(&data), "--task", "node", "--dim", "4", "--epochs", "5", "--seeds", "10", "--out", s(&out),
    ]);
    let summary: Vec<&str> = stdout.lines().filter(|l| l.ends_with("\tsummary")).collect();
    assert!(!summary.is_empty());
    assert!(summary.iter().all(|l| l.contains('±')));
    for seed in 0..10 {
        assert!(out.join(format!("seed-{seed}/checkpoint.tsv")).is_file());
    }
}

#[test]
fn verify_passes_on_toy_and_synthetic_data() {
    let tmp = tempfile::tempdir().unwrap();
    let toy = toy_dir(tmp.path());
    ok(&["verify", "--data", s(&toy), "--max-l", "3", "--beta", "0.5,-1"]);
    let synth = synth_dir(tmp.path(), 25, 6);
    let report = tmp.path().join("report");
    ok(&["verify", "--data", s(&synth), "--out", s(&report)]);
    for f in ["report.txt", "deviations.tsv", "manifest.json"] {
        assert!(report.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        ok(&["synth", "--out", s(&tmp.path().join(name)), "--nodes", "50", "--seed", seed])
    };
    let a = run("a", "7");
    assert_eq!(a, run("b", "7"));
    assert_ne!(a, run("c", "8"));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_dir(tmp.path());
    let missing = tmp.path().join("nope.tsv");
    let cases: [&[&str]; 4] = [
        &["eval", "--data", s(&data), "--checkpoint", s(&missing), "--task", "link"],
        &["train", "--data", s(&data), "--task", "link", "--bogus", "--out", "x"],
        &["eval", "--run", s(tmp.path())],
        &["verify", "--data", s(&data), "--beta", "1,2,3"],
    ];
    for args in cases {
        let out = mhgcn(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}
