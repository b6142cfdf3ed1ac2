//! CLI behavior: exit codes, validation-before-training, and report layout.

use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_distilkit")
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("distilkit-cli-{}-{name}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn usage_errors_exit_2() {
    for args in [vec!["frobnicate"], vec!["run"], vec!["run", "m.json"], vec!["analyze"]] {
        let output = Command::new(binary()).args(&args).output().unwrap();
        assert_eq!(output.status.code(), Some(2), "args {args:?}");
    }
}

#[test]
fn unknown_loss_name_exits_2_and_lists_presets() {
    let dir = scratch("badloss");
    let manifest = dir.join("m.json");
    std::fs::write(
        &manifest,
        r#"{
          "distiller": "general",
          "teacher_spec": {"kind": "transformer_encoder", "num_layers": 2, "hidden_size": 16,
                           "feed_forward_size": 32, "num_heads": 2, "vocab_size": 32,
                           "max_positions": 12, "head": {"kind": "classification", "num_labels": 3}},
          "student_spec": {"kind": "transformer_encoder", "num_layers": 1, "hidden_size": 8,
                           "feed_forward_size": 16, "num_heads": 2, "vocab_size": 32,
                           "max_positions": 12, "head": {"kind": "classification", "num_labels": 3}},
          "task": {"kind": "classification", "seed": 1, "n": 16, "num_classes": 3,
                   "vocab_size": 32, "length": 12},
          "distillation": {"intermediate_matches": [
            {"feature": "hidden", "loss": "nope", "layer_T": 1, "layer_S": 1, "weight": 1}
          ]}
        }"#,
    )
    .unwrap();
    let out_dir = dir.join("out");
    let output = Command::new(binary())
        .args(["run"])
        .arg(&manifest)
        .args(["--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("nope"), "{stderr}");
    assert!(stderr.contains("hidden_mse") && stderr.contains("nst"), "{stderr}");
    // Validation failed before training: no outputs were produced.
    assert!(!out_dir.join("report.json").exists());
    assert!(!out_dir.join("logs").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn dimension_mismatch_without_projection_exits_2() {
    let dir = scratch("dimmismatch");
    let manifest = dir.join("m.json");
    std::fs::write(
        &manifest,
        r#"{
          "distiller": "general",
          "teacher_spec": {"kind": "transformer_encoder", "num_layers": 2, "hidden_size": 16,
                           "feed_forward_size": 32, "num_heads": 2, "vocab_size": 32,
                           "max_positions": 12, "head": {"kind": "classification", "num_labels": 3}},
          "student_spec": {"kind": "transformer_encoder", "num_layers": 1, "hidden_size": 8,
                           "feed_forward_size": 16, "num_heads": 2, "vocab_size": 32,
                           "max_positions": 12, "head": {"kind": "classification", "num_labels": 3}},
          "task": {"kind": "classification", "seed": 1, "n": 16, "num_classes": 3,
                   "vocab_size": 32, "length": 12},
          "distillation": {"intermediate_matches": [
            {"feature": "hidden", "loss": "hidden_mse", "layer_T": 2, "layer_S": 1, "weight": 1}
          ]}
        }"#,
    )
    .unwrap();
    let output = Command::new(binary())
        .args(["run"])
        .arg(&manifest)
        .args(["--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("proj"), "{stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn malformed_manifest_json_exits_2() {
    let dir = scratch("badjson");
    let manifest = dir.join("m.json");
    std::fs::write(&manifest, "{\"distiller\": ").unwrap();
    let output = Command::new(binary())
        .args(["run"])
        .arg(&manifest)
        .args(["--out"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn run_writes_report_checkpoints_and_log_under_out() {
    let dir = scratch("layout");
    let manifest = repo_file("manifests/basic_distill.json");
    let before = std::fs::read(&manifest).unwrap();
    let output = Command::new(binary())
        .args(["run"])
        .arg(&manifest)
        .args(["--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    // The manifest is untouched.
    assert_eq!(before, std::fs::read(&manifest).unwrap());

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let steps = report["checkpoint_steps"].as_array().unwrap();
    let checkpoints = report["checkpoints"].as_array().unwrap();
    assert_eq!(steps.len(), checkpoints.len());
    assert!(report["final"]["accuracy"].as_f64().is_some());
    assert!(report["teacher"]["metrics"]["accuracy"].as_f64().is_some());
    assert_eq!(report["resolved"]["distillation"]["temperature"].as_f64(), Some(8.0));

    // Checkpoint files exist for every scheduled step.
    for step in steps {
        let gs = dir.join("output").join(format!("gs{}", step.as_u64().unwrap()));
        assert!(gs.exists(), "{gs:?}");
    }
    // The loss log follows the step<TAB>name<TAB>value format.
    let log = std::fs::read_to_string(dir.join("logs/train.log")).unwrap();
    for line in log.lines().take(5) {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 3, "{line}");
        fields[0].parse::<u64>().unwrap();
        fields[2].parse::<f64>().unwrap();
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn seed_flag_changes_the_run() {
    let manifest = repo_file("manifests/basic_distill.json");
    let read_log = |seed: &str, tag: &str| {
        let dir = scratch(tag);
        let status = Command::new(binary())
            .args(["run"])
            .arg(&manifest)
            .args(["--out"])
            .arg(&dir)
            .args(["--seed", seed])
            .status()
            .unwrap();
        assert!(status.success());
        let log = std::fs::read_to_string(dir.join("logs/train.log")).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        log
    };
    let a = read_log("1", "seed-a");
    let b = read_log("2", "seed-b");
    assert_ne!(a, b);
}

#[test]
fn analyze_single_spec_is_its_own_reference() {
    let output = Command::new(binary())
        .args(["analyze"])
        .arg(repo_file("manifests/specs/t6.json"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("100.0%"), "{stdout}");
}

#[test]
fn analyze_rejects_unparseable_specs() {
    let dir = scratch("badspec");
    let spec = dir.join("bad.json");
    std::fs::write(&spec, r#"{"kind": "transformer_encoder"}"#).unwrap();
    let output = Command::new(binary()).args(["analyze"]).arg(&spec).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bundled_manifests_run_and_report_every_checkpoint() {
    for name in ["general_distill", "multi_teacher", "multi_task", "bigru_student"] {
        let dir = scratch(&format!("smoke-{name}"));
        let status = Command::new(binary())
            .args(["run"])
            .arg(repo_file(&format!("manifests/{name}.json")))
            .args(["--out"])
            .arg(&dir)
            .status()
            .unwrap();
        assert!(status.success(), "{name}");
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap())
                .unwrap();
        // One metrics entry per scheduled checkpoint.
        assert_eq!(
            report["checkpoints"].as_array().unwrap().len(),
            report["checkpoint_steps"].as_array().unwrap().len(),
            "{name}"
        );
        std::fs::remove_dir_all(&dir).ok();
    }
}
