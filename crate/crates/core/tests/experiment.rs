//! Experiment orchestration on a micro synthetic setup: artifacts, manifest,
//! failure handling and report rows.

use std::fs;
use std::path::Path;

use serde_json::json;

use cramnet::report::{run_experiment, ExperimentConfig, Manifest, RunRecord, StageStatus, POINTS_HEADER};
use cramnet::Error;

fn write_json(path: &Path, value: &serde_json::Value) {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

/// Architecture, plan and config files in `dir`; returns the config path.
fn micro_setup(dir: &Path, stages: &[&str], extra: serde_json::Value) -> std::path::PathBuf {
    write_json(
        &dir.join("arch.json"),
        &json!({
            "input_shape": [8, 8, 3],
            "classes": 3,
            "layers": [
                {"name": "conv1", "kind": "conv2d", "width": 6, "kernel": [3, 3], "padding": "same"},
                {"name": "relu1", "kind": "relu"},
                {"name": "pool1", "kind": "maxpool"},
                {"name": "flatten", "kind": "flatten"},
                {"name": "fc1", "kind": "dense", "width": 12},
                {"name": "relu2", "kind": "relu"},
                {"name": "output", "kind": "softmax_output", "width": 3}
            ]
        }),
    );
    write_json(
        &dir.join("plan.json"),
        &json!({
            "targets": {"conv1": 3, "fc1": 4},
            "finetune_epochs": 2,
            "stop": {"max_epochs": 2, "patience": 2}
        }),
    );
    let mut cfg = json!({
        "arch": "arch.json",
        "plan": "plan.json",
        "data": {
            "kind": "synthetic", "classes": 3, "height": 8, "width": 8, "channels": 3,
            "train": 60, "test": 30, "noise": 0.1, "jitter": 0, "val_fraction": 0.2
        },
        "optimizer": {"learning_rate": 0.001, "batch_size": 16},
        "train": {"max_epochs": 3, "patience": 3},
        "seeds": {"data": 1, "init": 2, "train": 3, "compress": 4, "finetune": 5},
        "stages": stages,
        "out_dir": "run"
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("micro.json");
    write_json(&path, &cfg);
    path
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(micro_setup(
        dir.path(),
        &["train", "compress", "finetune", "evaluate"],
        json!({}),
    ))
    .unwrap();
    assert_eq!(cfg.run_id(), "micro");
    assert_eq!(cfg.run_dir(), dir.path().join("run"));
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.exit_code(), 0);
    for f in [
        "teacher.ckpt",
        "train.csv",
        "student_compressed.ckpt",
        "subproblems.csv",
        "subproblem_trace.csv",
        "student.ckpt",
        "finetune.csv",
        "metrics.json",
        "report.md",
        "points.csv",
        "manifest.json",
    ] {
        assert!(out.run_dir.join(f).exists(), "{f}");
    }
    assert!(out.run_dir.join("subproblems/subproblem_0_fc1.csv").exists());
    assert!(out.run_dir.join("subproblems/subproblem_1_conv1.csv").exists());

    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(out.run_dir.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.ok);
    assert!(manifest.stages.iter().all(|s| s.status == StageStatus::Ok));

    // Report rows in the accuracy-against-compression plot format.
    let record = RunRecord::load(out.run_dir.join("metrics.json")).unwrap();
    let m = &record.metrics;
    assert!(m.param_ratio < 100.0);
    assert!((m.delta_a.unwrap() - (m.a_c.unwrap() - m.a_100.unwrap())).abs() < 1e-9);
    let points = fs::read_to_string(out.run_dir.join("points.csv")).unwrap();
    let lines: Vec<&str> = points.lines().collect();
    assert_eq!(lines[0], POINTS_HEADER);
    assert_eq!(lines.len(), 2);
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells[0], "micro");
    assert_eq!(cells[1], format!("{:.2}", m.param_ratio));
    assert_eq!(cells[2], format!("{:.2}", m.flop_ratio));
    assert_eq!(cells[3], format!("{:.2}", m.delta_a.unwrap()));
    assert_eq!(out.compression.as_ref().unwrap().accuracies.len(), 2);
}

#[test]
fn missing_teacher_checkpoint_fails_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(micro_setup(
        dir.path(),
        &["compress", "finetune", "evaluate"],
        json!({"teacher": "nowhere/teacher.ckpt"}),
    ))
    .unwrap();
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.exit_code(), 1);
    let compress = &out.manifest.stages[0];
    assert_eq!(compress.stage, "compress");
    assert_eq!(compress.status, StageStatus::Failed);
    assert!(compress.error.as_deref().unwrap().contains("teacher.ckpt"));
    assert!(out.manifest.stages[1..].iter().all(|s| s.status == StageStatus::Skipped));
    let on_disk: Manifest = serde_json::from_str(&fs::read_to_string(out.run_dir.join("manifest.json")).unwrap()).unwrap();
    assert!(!on_disk.ok);
}

#[test]
fn invalid_plan_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = micro_setup(dir.path(), &["train", "compress"], json!({}));
    write_json(&dir.path().join("plan.json"), &json!({"targets": {"conv1": 99}}));
    let cfg = ExperimentConfig::load(path).unwrap();
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn compress_without_plan_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = micro_setup(dir.path(), &["compress"], json!({"plan": null}));
    let cfg = ExperimentConfig::load(path).unwrap();
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = micro_setup(dir.path(), &["train"], json!({"epochs": 3}));
    assert!(matches!(ExperimentConfig::load(path), Err(Error::Config(_))));
}

#[test]
fn stages_resume_from_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let path = micro_setup(dir.path(), &["train"], json!({}));
    let first = run_experiment(&ExperimentConfig::load(&path).unwrap()).unwrap();
    assert_eq!(first.exit_code(), 0);
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    cfg.stages = vec![cramnet::report::Stage::Compress, cramnet::report::Stage::Evaluate];
    let second = run_experiment(&cfg).unwrap();
    assert_eq!(second.exit_code(), 0);
    let names: Vec<&str> = second.manifest.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(names, ["train", "compress", "evaluate"]);
    // Without fine-tuning the compressed student is what gets evaluated.
    let record = second.record.unwrap();
    assert_eq!(record.a_pre_finetune, record.metrics.a_c);
}
