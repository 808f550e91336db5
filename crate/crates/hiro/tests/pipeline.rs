use std::fs;
use std::path::{Path, PathBuf};

use hiro::config::PipelineConfig;
use hiro::generation::read_summaries;
use hiro::pipeline::{Pipeline, Stage, MODEL_FILE, SUMMARIES_FILE};
use hiro::rng::substream;
use hiro::{Error, QuantizerModel};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy")
}

/// Copy the toy fixture into a fresh directory and load its config.
fn toy(overrides: &[&str]) -> (tempfile::TempDir, Pipeline) {
    let dir = tempfile::tempdir().unwrap();
    for f in ["config.json", "reviews.jsonl", "references.jsonl"] {
        fs::copy(fixture_dir().join(f), dir.path().join(f)).unwrap();
    }
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let cfg = PipelineConfig::load(Some(&dir.path().join("config.json")), &overrides).unwrap();
    let p = Pipeline::new(cfg, dir.path()).unwrap();
    (dir, p)
}

fn stage_error(r: hiro::Result<hiro::pipeline::StageOutcome>) -> (&'static str, &'static str) {
    match r {
        Err(Error::Stage { stage, rerun, .. }) => (stage, rerun),
        other => panic!("expected a stage error, got {other:?}"),
    }
}

#[test]
fn retrieve_before_index_is_a_stage_order_error() {
    let (_d, p) = toy(&[]);
    assert_eq!(stage_error(p.run(Stage::Retrieve)), ("retrieve", "ingest"));
    for s in [Stage::Ingest, Stage::MinePairs, Stage::Train] {
        p.run(s).unwrap();
    }
    assert_eq!(stage_error(p.run(Stage::Retrieve)), ("retrieve", "index"));
    p.run(Stage::Index).unwrap();
    p.run(Stage::Retrieve).unwrap();
}

#[test]
fn zero_training_steps_keep_the_initial_model() {
    let (_d, p) = toy(&["quantizer.steps=0"]);
    for s in [Stage::Ingest, Stage::MinePairs, Stage::Train] {
        p.run(s).unwrap();
    }
    let saved = QuantizerModel::load(&p.artifact(MODEL_FILE)).unwrap();
    let init = QuantizerModel::init(&p.config().quantizer, &mut substream(p.config().seed, "init")).unwrap();
    assert_eq!(saved, init);
}

#[test]
fn stage_rerun_is_byte_identical() {
    let (_d, p) = toy(&[]);
    p.run_all().unwrap();
    let before = fs::read(p.artifact(SUMMARIES_FILE)).unwrap();
    let model = fs::read(p.artifact(MODEL_FILE)).unwrap();
    p.run(Stage::Train).unwrap();
    p.run(Stage::Summarize).unwrap();
    assert_eq!(fs::read(p.artifact(MODEL_FILE)).unwrap(), model);
    assert_eq!(fs::read(p.artifact(SUMMARIES_FILE)).unwrap(), before);
}

#[test]
fn edited_artifacts_and_config_make_downstream_stale() {
    let (_d, p) = toy(&[]);
    p.run_all().unwrap();
    let corpus = p.artifact("corpus.json");
    let mut raw = fs::read_to_string(&corpus).unwrap();
    raw.push('\n');
    fs::write(&corpus, raw).unwrap();
    assert_eq!(stage_error(p.run(Stage::Summarize)), ("summarize", "ingest"));

    let (dir, p) = toy(&[]);
    p.run_all().unwrap();
    let cfg = PipelineConfig::load(Some(&dir.path().join("config.json")), &["retrieval.k=2".into()]).unwrap();
    let changed = Pipeline::new(cfg, dir.path()).unwrap();
    assert_eq!(stage_error(changed.run(Stage::Evaluate)), ("evaluate", "retrieve"));
    changed.run(Stage::Retrieve).unwrap();
    assert_eq!(stage_error(changed.run(Stage::Evaluate)), ("evaluate", "summarize"));
}

#[test]
fn every_mode_runs_and_writes_one_file_per_sample() {
    for mode in ["ext", "sent", "doc", "zero_shot"] {
        let (_d, p) = toy(&[&format!("generation.mode={mode}"), "generation.samples=3"]);
        p.run_all().unwrap();
        let all = read_summaries(&p.artifact(SUMMARIES_FILE)).unwrap();
        assert_eq!(all.len(), 9, "{mode}");
        for i in 0..3 {
            let one = read_summaries(&p.artifact(&hiro::pipeline::sample_file(i))).unwrap();
            assert_eq!(one.len(), 3);
            assert!(one.iter().all(|s| s.sample == i));
        }
        let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.artifact("report.json")).unwrap()).unwrap();
        assert_eq!(report["mode"], mode);
        assert_eq!(report["config"]["generation"]["mode"], mode);
        let support = &report["aggregate"]["partial_support_pct"];
        assert_eq!(support.is_null(), mode == "zero_shot", "{mode}");
    }
}

#[test]
fn extractive_sentences_are_verbatim() {
    let (_d, p) = toy(&["generation.mode=ext"]);
    p.run_all().unwrap();
    let inputs: Vec<String> = fs::read_to_string(p.artifact("corpus.json"))
        .map(|raw| hiro::Corpus::from_json(&raw).unwrap())
        .unwrap()
        .sentences()
        .iter()
        .map(|s| s.text.clone())
        .collect();
    for s in read_summaries(&p.artifact(SUMMARIES_FILE)).unwrap() {
        assert!(!s.sentences.is_empty());
        for sent in &s.sentences {
            assert!(inputs.contains(sent), "{sent:?}");
        }
    }
}
