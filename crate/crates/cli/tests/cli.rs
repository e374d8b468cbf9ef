//! End-to-end smoke tests: drive the binary exactly as a user would and
//! check the pipeline's artifacts, including byte-level determinism.

use std::path::Path;
use std::process::Command;

fn fscil() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fscil"))
}

/// Shrink every stage far enough that the whole pipeline runs in seconds.
const TINY: &[&str] = &[
    "--set",
    "dataset.classes=8",
    "--set",
    "dataset.per_class_train=12",
    "--set",
    "dataset.per_class_test=4",
    "--set",
    "encoder.conv_channels=[3,5]",
    "--set",
    "encoder.embed_dim=8",
    "--set",
    "pretrain.epochs=3",
    "--set",
    "pil.way=2",
    "--set",
    "pil.query=3",
    "--set",
    "pil.iterations=4",
    "--set",
    "run.base_classes=4",
    "--set",
    "run.way=2",
    "--set",
    "run.shot=3",
    "--set",
    "run.incremental_sessions=2",
];

fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("binary runs");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn pipeline(dir: &Path) -> String {
    let pre = dir.join("pre");
    let pil = dir.join("pil");
    let run = dir.join("run");
    run_ok(fscil()
        .args(["pretrain", "--seed", "3", "--out"])
        .arg(&pre)
        .args(TINY));
    run_ok(fscil()
        .args(["pil", "--seed", "5", "--out"])
        .arg(&pil)
        .arg("--encoder")
        .arg(pre.join("encoder.json"))
        .args(TINY));
    let stdout = run_ok(fscil()
        .args(["run", "--seed", "7", "--out"])
        .arg(&run)
        .arg("--encoder")
        .arg(pil.join("encoder.json"))
        .arg("--adapter")
        .arg(pil.join("adapter.json"))
        .args(TINY));
    for name in ["metrics.json", "sessions.csv", "confusion_0.csv", "head.json"] {
        assert!(run.join(name).is_file(), "missing artifact {name}");
    }
    stdout
}

#[test]
fn full_pipeline_produces_artifacts_and_is_deterministic() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let out_a = pipeline(dir_a.path());
    let out_b = pipeline(dir_b.path());
    assert_eq!(out_a, out_b, "stdout must be identical across reruns");
    assert!(out_a.contains("performance drop"));

    let metrics_a = std::fs::read(dir_a.path().join("run/metrics.json")).unwrap();
    let metrics_b = std::fs::read(dir_b.path().join("run/metrics.json")).unwrap();
    assert_eq!(metrics_a, metrics_b, "metrics.json must be byte-identical");

    let json: serde_json::Value = serde_json::from_slice(&metrics_a).unwrap();
    assert_eq!(json["sessions"], 3);
    assert_eq!(json["accuracies"].as_array().unwrap().len(), 3);
    assert!(json["digests"]["adapter"].is_string());

    // eval on the final head reproduces the last session's pooled accuracy.
    let eval_out = run_ok(fscil()
        .arg("eval")
        .arg("--encoder")
        .arg(dir_a.path().join("pil/encoder.json"))
        .arg("--head")
        .arg(dir_a.path().join("run/head.json"))
        .arg("--adapter")
        .arg(dir_a.path().join("pil/adapter.json"))
        .args(TINY));
    assert!(eval_out.contains("8 classes"), "stdout: {eval_out}");
}

#[test]
fn run_without_adapter_checkpoint_needs_use_adapter_off() {
    let dir = tempfile::tempdir().unwrap();
    let pre = dir.path().join("pre");
    run_ok(fscil()
        .args(["pretrain", "--seed", "3", "--out"])
        .arg(&pre)
        .args(TINY));
    let out = fscil()
        .args(["run", "--seed", "7", "--out"])
        .arg(dir.path().join("run"))
        .arg("--encoder")
        .arg(pre.join("encoder.json"))
        .args(TINY)
        .output()
        .unwrap();
    assert!(!out.status.success(), "missing adapter must fail");
    run_ok(fscil()
        .args(["run", "--seed", "7", "--out"])
        .arg(dir.path().join("run2"))
        .arg("--encoder")
        .arg(pre.join("encoder.json"))
        .args(TINY)
        .args(["--set", "run.use_adapter=false"]));
}

#[test]
fn bad_config_value_is_a_clean_error() {
    let out = fscil()
        .args(["pretrain", "--seed", "1", "--out", "/tmp/never-used"])
        .args(["--set", "run.shot=\"many\""])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("schema"),
        "error should mention the schema, got: {stderr}"
    );
}

#[test]
fn ablation_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let pre = dir.path().join("pre");
    run_ok(fscil()
        .args(["pretrain", "--seed", "3", "--out"])
        .arg(&pre)
        .args(TINY));
    let stdout = run_ok(fscil()
        .args(["ablate", "--seed", "9", "--axis", "way-shot", "--out"])
        .arg(dir.path().join("grid"))
        .arg("--encoder")
        .arg(pre.join("encoder.json"))
        .args(TINY)
        .args(["--set", "ablate.way_shot=[[2,1],[2,2]]"]));
    let csv = std::fs::read_to_string(dir.path().join("grid/ablation.csv")).unwrap();
    assert!(csv.starts_with("config,s0,s1,s2,average,pd\n"));
    assert_eq!(csv.lines().count(), 3, "two cells plus header: {csv}");
    assert!(stdout.contains("way2-shot1"));
}
