//! End-to-end command tests driving the compiled binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_segprob"))
}

fn tmp(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("segprob_cli_{tag}_{}", std::process::id()));
    fs::remove_dir_all(&dir).ok();
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Tiny-but-real settings so generate+train+predict+evaluate stay fast.
const TINY: &[&str] = &[
    "seed=5",
    "dataset.n_samples=8",
    "dataset.grid=16",
    "dataset.blob_scale=2.5,4.0",
    "model.kernel_depths=4,8",
    "train.epochs=2",
    "train.minibatch=4",
    "train.patch=16",
];

fn gen_args<'a>(out: &'a str, extra: &'a [&'a str]) -> Vec<&'a str> {
    let mut v = vec!["generate", "--out", out];
    v.extend_from_slice(TINY);
    v.extend_from_slice(extra);
    v
}

#[test]
fn generate_writes_dataset_and_echo() {
    let dir = tmp("gen");
    let out = dir.join("data");
    let outs = out.to_str().unwrap();
    let res = run(&gen_args(outs, &[]));
    assert_ok(&res);
    assert!(out.join("dataset.manifest").is_file());
    assert!(out.join("config.txt").is_file());
    let echo = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("format_version = 1"));
    assert!(echo.contains("seed = 5"));
    for i in 0..8 {
        assert!(out.join(format!("sample_{i:06}")).join("image.f64").is_file());
    }
}

#[test]
fn generate_is_byte_deterministic() {
    let dir = tmp("gen_det");
    let a = dir.join("a");
    let b = dir.join("b");
    assert_ok(&run(&gen_args(a.to_str().unwrap(), &[])));
    assert_ok(&run(&gen_args(b.to_str().unwrap(), &[])));
    for rel in [
        "dataset.manifest",
        "config.txt",
        "sample_000003/image.f64",
        "sample_000005/ptrue.f64",
        "sample_000007/annotation.u8",
    ] {
        assert_eq!(
            fs::read(a.join(rel)).unwrap(),
            fs::read(b.join(rel)).unwrap(),
            "{rel} differs between identical runs"
        );
    }
}

#[test]
fn invalid_config_value_exits_one() {
    let dir = tmp("gen_bad");
    let out = dir.join("data");
    let res = run(&gen_args(out.to_str().unwrap(), &["dataset.n_samples=-3"]));
    assert_eq!(res.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&res.stderr);
    assert!(msg.contains("dataset.n_samples"), "stderr: {msg}");
}

#[test]
fn unknown_key_exits_one() {
    let dir = tmp("gen_unknown");
    let out = dir.join("data");
    let res = run(&gen_args(out.to_str().unwrap(), &["dataset.wibble=1"]));
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("dataset.wibble"));
}

#[test]
fn missing_seed_exits_one() {
    let dir = tmp("gen_noseed");
    let res = run(&[
        "generate",
        "--out",
        dir.join("d").to_str().unwrap(),
        "dataset.n_samples=2",
        "dataset.grid=16",
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("seed"));
}

fn train_into(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn train_vtv_creates_member_directories() {
    let dir = tmp("train_vtv");
    let data = dir.join("data");
    assert_ok(&run(&gen_args(data.to_str().unwrap(), &[])));
    let out = dir.join("vtv");
    let res = train_into(
        &data,
        &out,
        &[
            "train.strategy=vtv_ensemble",
            "train.alpha_grid=0.1,0.3,0.5,0.7,0.9",
            "train.epochs=1",
        ],
    );
    assert_ok(&res);
    for alpha in ["0.1", "0.3", "0.5", "0.7", "0.9"] {
        let member = out.join(format!("member_{alpha}"));
        assert!(member.join("manifest").is_file(), "missing {member:?}");
        assert!(member.join("weights.bin").is_file());
    }
    assert!(out.join("train.log").is_file());
    assert!(out.join("report.json").is_file());
    assert!(out.join("config.txt").is_file());
}

#[test]
fn train_hypernet_writes_alpha_log() {
    let dir = tmp("train_hyper");
    let data = dir.join("data");
    assert_ok(&run(&gen_args(data.to_str().unwrap(), &[])));
    let out = dir.join("hyper");
    let res = train_into(
        &data,
        &out,
        &[
            "train.strategy=hypernet",
            "model.kind=hyper",
            "model.hypervector_size=8",
            "model.mapping_layers=2",
        ],
    );
    assert_ok(&res);
    assert!(out.join("model").join("manifest").is_file());
    let log = fs::read_to_string(out.join("train.log")).unwrap();
    let alpha_lines = log
        .lines()
        .filter(|l| l.contains("alpha=") && !l.starts_with('#'))
        .count();
    assert!(alpha_lines > 0, "no alpha audit lines in train.log");
}

#[test]
fn train_epochs_zero_checkpoint_equals_init_and_is_deterministic() {
    let dir = tmp("train_zero");
    let data = dir.join("data");
    assert_ok(&run(&gen_args(data.to_str().unwrap(), &[])));
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        let res = train_into(&data, out, &["train.strategy=single_dice_ce", "train.epochs=0"]);
        assert_ok(&res);
    }
    assert_eq!(
        fs::read(out_a.join("model/weights.bin")).unwrap(),
        fs::read(out_b.join("model/weights.bin")).unwrap()
    );
    assert_eq!(
        fs::read(out_a.join("model/manifest")).unwrap(),
        fs::read(out_b.join("model/manifest")).unwrap()
    );
}

#[test]
fn predict_writes_maps_per_tau_and_evaluate_reports() {
    let dir = tmp("roundtrip");
    let data = dir.join("data");
    assert_ok(&run(&gen_args(data.to_str().unwrap(), &[])));
    let train_out = dir.join("model");
    assert_ok(&train_into(
        &data,
        &train_out,
        &["train.strategy=single_dice_ce", "train.epochs=1"],
    ));

    let pred_out = dir.join("pred");
    let mut args = vec![
        "predict",
        "--dataset",
        data.to_str().unwrap(),
        "--checkpoint",
        train_out.to_str().unwrap(),
        "--out",
        pred_out.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    args.push("predict.taus=0.25,0.5,0.75");
    args.push("predict.patch=16");
    assert_ok(&run(&args));
    let sample = pred_out.join("sample_000000");
    for file in [
        "prob.f64",
        "prob.header",
        "prob.pgm",
        "entropy.f64",
        "label_tau0.25.u8",
        "label_tau0.5.u8",
        "label_tau0.75.u8",
    ] {
        assert!(sample.join(file).is_file(), "missing {file}");
    }

    // Empty tau list: probability and entropy maps only.
    let pred_empty = dir.join("pred_empty");
    let mut args = vec![
        "predict",
        "--dataset",
        data.to_str().unwrap(),
        "--checkpoint",
        train_out.to_str().unwrap(),
        "--out",
        pred_empty.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    args.push("predict.taus=");
    args.push("predict.patch=16");
    assert_ok(&run(&args));
    let sample = pred_empty.join("sample_000000");
    assert!(sample.join("prob.f64").is_file());
    assert!(sample.join("entropy.f64").is_file());
    assert!(!sample.join("label_tau0.5.u8").exists());

    let eval_out = dir.join("eval");
    let mut args = vec![
        "evaluate",
        "--dataset",
        data.to_str().unwrap(),
        "--predictions",
        pred_out.to_str().unwrap(),
        "--method",
        "demo",
        "--out",
        eval_out.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    assert_ok(&run(&args));
    let summary = fs::read_to_string(eval_out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,aggregation,dice"));
    assert!(summary.contains("demo,micro,"));
    assert!(summary.contains("demo,per_sample_mean,"));
    let sweep = fs::read_to_string(eval_out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 21, "21 sweep rows at 0.05 step");
    assert!(eval_out.join("report.json").is_file());
}

#[test]
fn predict_missing_checkpoint_exits_nonzero() {
    let dir = tmp("pred_missing");
    let data = dir.join("data");
    assert_ok(&run(&gen_args(data.to_str().unwrap(), &[])));
    let pred = dir.join("pred");
    let mut args = vec![
        "predict",
        "--dataset",
        data.to_str().unwrap(),
        "--checkpoint",
        "/nonexistent/checkpoint",
        "--out",
        pred.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    let res = run(&args);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn evaluate_reports_orphan_ids() {
    let dir = tmp("eval_orphans");
    let data = dir.join("data");
    assert_ok(&run(&gen_args(data.to_str().unwrap(), &[])));
    let train_out = dir.join("model");
    assert_ok(&train_into(
        &data,
        &train_out,
        &["train.strategy=single_dice_ce", "train.epochs=0"],
    ));
    let pred_out = dir.join("pred");
    let mut args = vec![
        "predict",
        "--dataset",
        data.to_str().unwrap(),
        "--checkpoint",
        train_out.to_str().unwrap(),
        "--out",
        pred_out.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    args.push("predict.patch=16");
    assert_ok(&run(&args));
    // Remove one prediction: its ID becomes a missing orphan.
    fs::remove_dir_all(pred_out.join("sample_000002")).unwrap();
    let eval_out = dir.join("eval");
    let mut args = vec![
        "evaluate",
        "--dataset",
        data.to_str().unwrap(),
        "--predictions",
        pred_out.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    let res = run(&args);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("sample_000002"));
}

#[test]
fn train_then_retrain_is_byte_identical() {
    let dir = tmp("train_det");
    let data = dir.join("data");
    assert_ok(&run(&gen_args(data.to_str().unwrap(), &[])));
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out in [&out_a, &out_b] {
        assert_ok(&train_into(
            &data,
            out,
            &["train.strategy=single_dice", "train.epochs=1"],
        ));
    }
    for rel in ["model/weights.bin", "model/manifest", "report.json", "config.txt"] {
        assert_eq!(
            fs::read(out_a.join(rel)).unwrap(),
            fs::read(out_b.join(rel)).unwrap(),
            "{rel} differs"
        );
    }
}
