mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn snip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snip")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_2() {
    let out = snip(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(snip(&[]).status.code(), Some(2));
    assert_eq!(snip(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    fs::write(&cfg, "seed = 1\nlearning_rate = 3\n").unwrap();
    let out = snip(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
    assert_eq!(snip(&["prune", "--criterion", "hessian"]).status.code(), Some(2));
    assert_eq!(snip(&["viz-masks", "--model", "lenet5caffe"]).status.code(), Some(2));
    assert_eq!(snip(&["prune", "--config", s(&dir.path().join("missing.txt"))]).status.code(), Some(2));
}

#[test]
fn missing_or_corrupt_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(snip(&["prune", "--dataset-dir", s(dir.path()), "--out", s(&out)]).status.code(), Some(3));
    fs::write(dir.path().join("train-images-idx3-ubyte"), b"not an idx file").unwrap();
    fs::write(dir.path().join("train-labels-idx1-ubyte"), b"nor this").unwrap();
    assert_eq!(snip(&["prune", "--dataset-dir", s(dir.path()), "--out", s(&out)]).status.code(), Some(3));
}

#[test]
fn diverging_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    common::fake_mnist(dir.path(), 300, 50);
    let out = dir.path().join("out");
    let code = snip(&[
        "train", "--dataset-dir", s(dir.path()), "--out", s(&out), "--kappa-bar", "0", "--iterations", "20", "--eval-every", "10", "--set", "lr=1e30",
    ])
    .status
    .code();
    assert_eq!(code, Some(4));
}

#[test]
fn prune_writes_outputs_and_rerun_from_echo_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    common::fake_mnist(dir.path(), 400, 50);
    let a = dir.path().join("a");
    let out = snip(&["prune", "--model", "lenet300", "--kappa-bar", "90", "--seed", "9", "--dataset-dir", s(dir.path()), "--out", s(&a)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.stf", "saliency.stf", "prune-summary.csv", "config-echo.txt"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let summary = fs::read_to_string(a.join("prune-summary.csv")).unwrap();
    assert!(summary.lines().last().unwrap().starts_with("all,26620,266200,"));

    let b = dir.path().join("b");
    let out = snip(&["prune", "--config", s(&a.join("config-echo.txt")), "--out", s(&b)]);
    assert!(out.status.success());
    for f in ["model.stf", "saliency.stf", "prune-summary.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_then_eval_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    common::fake_mnist(dir.path(), 300, 60);
    let t = dir.path().join("t");
    let out = snip(&["train", "--dataset-dir", s(dir.path()), "--out", s(&t), "--iterations", "30", "--eval-every", "10", "--kappa-bar", "95"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(t.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "iter,train_loss,val_err,test_err,lr,wall_ms");
    assert_eq!(metrics.lines().count(), 5);

    let e = dir.path().join("e");
    let out = snip(&["eval", "--checkpoint", s(&t.join("final.stf")), "--dataset-dir", s(dir.path()), "--out", s(&e)]);
    assert!(out.status.success());
    let csv = fs::read_to_string(e.join("eval.csv")).unwrap();
    let test_line = csv.lines().find(|l| l.starts_with("test,")).unwrap();
    let last_metrics = metrics.lines().last().unwrap().split(',').nth(3).unwrap();
    assert_eq!(test_line, format!("test,60,{last_metrics}"));
}

#[test]
fn sweep_emits_one_row_per_level() {
    let dir = tempfile::tempdir().unwrap();
    common::fake_mnist(dir.path(), 200, 40);
    let o = dir.path().join("o");
    let out = snip(&[
        "sweep-sparsity", "--dataset-dir", s(dir.path()), "--out", s(&o), "--kappa-bar", "10,25,50,75,90,95,98", "--iterations", "5", "--eval-every", "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(o.join("sweep.csv")).unwrap();
    let levels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(levels, ["10", "25", "50", "75", "90", "95", "98"]);
}

#[test]
fn viz_masks_writes_atlas_and_pgms() {
    let dir = tempfile::tempdir().unwrap();
    common::fake_mnist(dir.path(), 400, 20);
    let o = dir.path().join("o");
    let out = snip(&["viz-masks", "--dataset-dir", s(dir.path()), "--out", s(&o), "--saliency-batch", "20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let atlas = fs::read(o.join("atlas.pgm")).unwrap();
    assert!(atlas.starts_with(b"P5\n280 252\n255\n"));
    assert_eq!(fs::read(o.join("mask-c3-k50.pgm")).unwrap().len(), 13 + 784);
    assert_eq!(fs::read_to_string(o.join("foreground.csv")).unwrap().lines().count(), 1 + 90);
}
