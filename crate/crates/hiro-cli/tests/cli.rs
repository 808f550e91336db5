use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn toy() -> tempfile::TempDir {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy");
    let dir = tempfile::tempdir().unwrap();
    for f in ["config.json", "reviews.jsonl", "references.jsonl"] {
        fs::copy(fixture.join(f), dir.path().join(f)).unwrap();
    }
    dir
}

fn hiro(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiro"))
        .arg("--config")
        .arg(dir.join("config.json"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn run_writes_the_report() {
    let dir = toy();
    let out = hiro(dir.path(), &["run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("prevalence"), "{stdout}");
    for f in ["manifest.json", "summaries.jsonl", "report.json", "report.csv", "depth_histogram.csv"] {
        assert!(dir.path().join("run").join(f).is_file(), "{f}");
    }
}

#[test]
fn stage_order_violation_fails_with_the_stage_to_rerun() {
    let dir = toy();
    let out = hiro(dir.path(), &["retrieve"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("rerun `ingest`"), "{stderr}");
}

#[test]
fn stages_run_one_at_a_time_and_overrides_apply() {
    let dir = toy();
    for stage in ["ingest", "mine-pairs", "train", "index", "retrieve"] {
        let out = hiro(dir.path(), &["--set", "retrieval.k=2", stage]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = hiro(dir.path(), &["summarize", "--samples", "1"]);
    assert!(!out.status.success(), "retrieve ran with a different k");
    let out = hiro(dir.path(), &["--set", "retrieval.k=2", "summarize", "--samples", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("run/summaries_sample0.jsonl").is_file());
    assert!(!dir.path().join("run/summaries_sample1.jsonl").exists());
}

#[test]
fn bad_overrides_and_show_config() {
    let dir = toy();
    let out = hiro(dir.path(), &["--set", "retrieval.nope=1", "show-config"]);
    assert!(!out.status.success());
    let out = hiro(dir.path(), &["--seed", "11", "show-config"]);
    assert!(out.status.success());
    let cfg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["seed"], 11);
}
