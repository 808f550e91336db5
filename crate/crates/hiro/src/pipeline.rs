//! Stage orchestration over a work directory, with a manifest that chains
//! artifact digests so stale or missing upstream outputs are caught.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::corpus::{ingest, Corpus, InputFormat, Vectorizer};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{
    attribution_support, cluster_ari, cluster_quality, clusters_at_depth, depth_histogram_csv, genericness, oracle_clusters,
    prevalence, rouge_multi, sap, AggregateMetrics, AttributionItem, ClusterMetrics, ClusterQuality, EntityMetrics, EvalReport,
    HierarchyQuality, NliSimilarity, PairSimilarity, RougeVariant, SimilarityMode, MAX_EXHAUSTIVE_PAIRS, REPORT_VERSION,
};
use crate::generation::{
    read_summaries, summarize_doc, summarize_ext, summarize_sent, summarize_zero_shot, write_summaries, Summary, SummaryMode,
};
use crate::ids::{EntityId, SentenceId};
use crate::io::{file_digest, sha256_hex, write_atomic};
use crate::nli::EntailmentClient;
use crate::pairing::{mine_pairs, read_pairs, write_pairs};
use crate::quantizer::{train_on_corpus, QuantizerModel};
use crate::retriever::{
    depth_histogram, index_corpus, postprocess_clusters, read_assignments, read_selections, write_assignments, write_selections,
    ClusterSelection, IndexedCorpus,
};
use crate::rng::substream;

pub const MANIFEST_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CORPUS_FILE: &str = "corpus.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.json";
pub const EMBEDDINGS_DATA_FILE: &str = "embeddings.f32";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.json";
pub const ASSIGNMENTS_FILE: &str = "assignments.jsonl";
pub const SELECTIONS_FILE: &str = "selections.json";
pub const HISTOGRAM_FILE: &str = "depth_histogram.csv";
pub const SUMMARIES_FILE: &str = "summaries.jsonl";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const REPORT_MD_FILE: &str = "report.md";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Per-sample summary file name.
pub fn sample_file(sample: usize) -> String {
    format!("summaries_sample{sample}.jsonl")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    MinePairs,
    Train,
    Index,
    Retrieve,
    Summarize,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::MinePairs,
        Stage::Train,
        Stage::Index,
        Stage::Retrieve,
        Stage::Summarize,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::MinePairs => "mine-pairs",
            Stage::Train => "train",
            Stage::Index => "index",
            Stage::Retrieve => "retrieve",
            Stage::Summarize => "summarize",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Stages whose outputs this stage reads. Zero-shot summaries skip the
    /// index entirely.
    fn deps(self, cfg: &PipelineConfig) -> Vec<Stage> {
        let zero_shot = cfg.generation.mode == SummaryMode::ZeroShot;
        match self {
            Stage::Ingest => vec![],
            Stage::MinePairs => vec![Stage::Ingest],
            Stage::Train => vec![Stage::Ingest, Stage::MinePairs],
            Stage::Index => vec![Stage::Ingest, Stage::Train],
            Stage::Retrieve => vec![Stage::Ingest, Stage::Index],
            Stage::Summarize if zero_shot => vec![Stage::Ingest],
            Stage::Summarize => vec![Stage::Ingest, Stage::Retrieve],
            Stage::Evaluate if zero_shot => vec![Stage::Ingest, Stage::Summarize],
            Stage::Evaluate => vec![Stage::Ingest, Stage::Index, Stage::Retrieve, Stage::Summarize],
            Stage::Report => vec![Stage::Evaluate],
        }
    }

    /// The part of the configuration that determines this stage's outputs.
    fn config_slice(self, cfg: &PipelineConfig) -> serde_json::Value {
        use serde_json::json;
        match self {
            Stage::Ingest => json!({"input": cfg.paths.input, "embeddings": cfg.embeddings}),
            Stage::MinePairs => json!({"seed": cfg.seed, "nli": cfg.nli, "pairing": cfg.pairing}),
            Stage::Train => json!({"seed": cfg.seed, "quantizer": cfg.quantizer, "neg_threshold": cfg.pairing.neg_threshold}),
            Stage::Index => json!({}),
            Stage::Retrieve => json!({"retrieval": cfg.retrieval}),
            Stage::Summarize => json!({"seed": cfg.seed, "generation": cfg.generation}),
            // The report embeds the whole configuration.
            Stage::Evaluate => serde_json::to_value(cfg).unwrap_or_default(),
            Stage::Report => json!({}),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_sha256: String,
    /// Digest of every file read, keyed by path (work-dir relative for
    /// artifacts, as configured for external inputs).
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub tool_version: String,
    pub seed: u64,
    /// Configuration of the most recent stage run.
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    fn empty(cfg: &PipelineConfig) -> Self {
        Self {
            version: MANIFEST_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            seed: cfg.seed,
            config: serde_json::to_value(cfg).unwrap_or_default(),
            stages: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&raw)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Version {
                what: "manifest",
                found: m.version,
                expected: MANIFEST_VERSION,
            });
        }
        Ok(m)
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn digest_value(v: &serde_json::Value) -> String {
    sha256_hex(v.to_string().as_bytes())
}

/// What a stage produced, for logging and the CLI.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub outputs: Vec<String>,
    /// Human-readable text to print, if the stage has any.
    pub message: Option<String>,
}

/// A configured run rooted at a work directory.
pub struct Pipeline {
    config: PipelineConfig,
    base_dir: PathBuf,
    work_dir: PathBuf,
}

impl Pipeline {
    /// `base_dir` anchors relative paths in the configuration, normally the
    /// directory holding the config file.
    pub fn new(config: PipelineConfig, base_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let base_dir = base_dir.into();
        let work_dir = base_dir.join(&config.paths.work_dir);
        Ok(Self {
            config,
            base_dir,
            work_dir,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn work_dir(&self) -> &Path {
        &self.work_dir
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.work_dir.join(name)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn manifest_path(&self) -> PathBuf {
        self.artifact(MANIFEST_FILE)
    }

    pub fn manifest(&self) -> Result<Option<RunManifest>> {
        let p = self.manifest_path();
        if p.exists() {
            RunManifest::load(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Run every stage in order.
    pub fn run_all(&self) -> Result<Vec<StageOutcome>> {
        Stage::ALL.into_iter().map(|s| self.run(s)).collect()
    }

    pub fn run(&self, stage: Stage) -> Result<StageOutcome> {
        let manifest = self.manifest()?.unwrap_or_else(|| RunManifest::empty(&self.config));
        self.check_upstream(stage, &manifest)?;
        let started = now_unix();
        tracing::info!(stage = stage.name(), "running stage");
        let StageResult { inputs, outputs, message } = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::MinePairs => self.mine_pairs()?,
            Stage::Train => self.train()?,
            Stage::Index => self.index()?,
            Stage::Retrieve => self.retrieve()?,
            Stage::Summarize => self.summarize()?,
            Stage::Evaluate => self.evaluate()?,
            Stage::Report => self.report()?,
        };
        let digest_all = |names: &[String], external: bool| -> Result<BTreeMap<String, String>> {
            names
                .iter()
                .map(|n| {
                    let p = if external { self.resolve(Path::new(n)) } else { self.artifact(n) };
                    Ok((n.clone(), file_digest(&p)?))
                })
                .collect()
        };
        let mut input_digests = digest_all(&inputs.artifacts, false)?;
        input_digests.extend(digest_all(&inputs.external, true)?);
        let record = StageRecord {
            config_sha256: digest_value(&stage.config_slice(&self.config)),
            inputs: input_digests,
            outputs: digest_all(&outputs, false)?,
            started_unix: started,
            finished_unix: now_unix(),
        };
        // Reread so a concurrent edit is not clobbered by a stale copy.
        let mut manifest = self.manifest()?.unwrap_or_else(|| RunManifest::empty(&self.config));
        manifest.tool_version = TOOL_VERSION.to_string();
        manifest.seed = self.config.seed;
        manifest.config = serde_json::to_value(&self.config)?;
        manifest.stages.insert(stage.name().to_string(), record);
        write_atomic(&self.manifest_path(), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(StageOutcome { stage, outputs, message })
    }

    /// Every transitive upstream stage must have run with the current
    /// configuration, and its recorded inputs and outputs must still match
    /// the files on disk.
    fn check_upstream(&self, stage: Stage, manifest: &RunManifest) -> Result<()> {
        let mut todo = stage.deps(&self.config);
        let mut seen: Vec<Stage> = Vec::new();
        while let Some(s) = todo.pop() {
            if !seen.contains(&s) {
                seen.push(s);
                todo.extend(s.deps(&self.config));
            }
        }
        // Report the earliest problem so the suggested rerun fixes it.
        seen.sort();
        for dep in seen {
            if let Some(reason) = self.stale_reason(dep, manifest) {
                return Err(Error::Stage {
                    stage: stage.name(),
                    reason,
                    rerun: dep.name(),
                });
            }
        }
        Ok(())
    }

    fn stale_reason(&self, dep: Stage, manifest: &RunManifest) -> Option<String> {
        let Some(rec) = manifest.stages.get(dep.name()) else {
            return Some(format!("upstream stage `{dep}` has not run"));
        };
        if rec.config_sha256 != digest_value(&dep.config_slice(&self.config)) {
            return Some(format!("configuration of `{dep}` changed since it ran"));
        }
        let external: Vec<String> = self.external_inputs(dep);
        for (name, digest) in rec.outputs.iter().chain(&rec.inputs) {
            let path = if external.contains(name) { self.resolve(Path::new(name)) } else { self.artifact(name) };
            match file_digest(&path) {
                Err(_) => return Some(format!("{} is missing", path.display())),
                Ok(d) if &d != digest => return Some(format!("{} changed since `{dep}` ran", path.display())),
                Ok(_) => {}
            }
        }
        None
    }

    fn external_inputs(&self, stage: Stage) -> Vec<String> {
        match stage {
            Stage::Ingest => vec![path_key(&self.config.paths.input)],
            Stage::Evaluate => self.config.paths.references.iter().map(|p| path_key(p)).collect(),
            _ => vec![],
        }
    }

    fn load_corpus(&self) -> Result<Corpus> {
        Corpus::load(&self.artifact(CORPUS_FILE))
    }

    fn load_embeddings(&self) -> Result<EmbeddingTable> {
        EmbeddingTable::load(&self.artifact(EMBEDDINGS_FILE))
    }

    fn nli(&self) -> Result<Box<dyn EntailmentClient>> {
        self.config.nli.build()
    }

    fn ingest(&self) -> Result<StageResult> {
        let input = self.resolve(&self.config.paths.input);
        let corpus = ingest(&input, InputFormat::Jsonl)?;
        tracing::info!(
            entities = corpus.entities().len(),
            reviews = corpus.reviews().len(),
            sentences = corpus.sentences().len(),
            "ingested corpus"
        );
        write_atomic(&self.artifact(CORPUS_FILE), corpus.to_json()?.as_bytes())?;
        let table = self.config.embeddings.embed_corpus(&corpus, &self.base_dir)?;
        if table.dim() != self.config.quantizer.dim {
            return Err(Error::Config(format!(
                "embeddings have dimension {} but quantizer.dim is {}",
                table.dim(),
                self.config.quantizer.dim
            )));
        }
        table.save(&self.artifact(EMBEDDINGS_FILE))?;
        Ok(StageResult::new(
            Inputs {
                artifacts: vec![],
                external: self.external_inputs(Stage::Ingest),
            },
            &[CORPUS_FILE, EMBEDDINGS_FILE, EMBEDDINGS_DATA_FILE],
        ))
    }

    fn mine_pairs(&self) -> Result<StageResult> {
        let corpus = self.load_corpus()?;
        let vz = Vectorizer::build(&corpus)?;
        let nli = self.nli()?;
        let pairs = mine_pairs(&corpus, &vz, nli.as_ref(), &self.config.pairing, &mut substream(self.config.seed, "pairing"))?;
        tracing::info!(pairs = pairs.len(), "mined positive pairs");
        write_pairs(&self.artifact(PAIRS_FILE), &pairs)?;
        Ok(StageResult::new(Inputs::artifacts(&[CORPUS_FILE]), &[PAIRS_FILE]))
    }

    fn train(&self) -> Result<StageResult> {
        let corpus = self.load_corpus()?;
        let table = self.load_embeddings()?;
        let pairs = read_pairs(&self.artifact(PAIRS_FILE))?;
        let vz = Vectorizer::build(&corpus)?;
        let mut model = QuantizerModel::init(&self.config.quantizer, &mut substream(self.config.seed, "init"))?;
        let log = train_on_corpus(
            &mut model,
            &pairs,
            &corpus,
            &table,
            &vz,
            self.config.pairing.neg_threshold,
            &mut substream(self.config.seed, "training"),
        )?;
        if let Some(last) = log.steps.last() {
            tracing::info!(steps = log.steps.len(), loss = last.loss, "training finished");
        }
        model.save(&self.artifact(MODEL_FILE))?;
        write_atomic(&self.artifact(TRAIN_LOG_FILE), serde_json::to_string_pretty(&log)?.as_bytes())?;
        Ok(StageResult::new(
            Inputs::artifacts(&[CORPUS_FILE, EMBEDDINGS_FILE, EMBEDDINGS_DATA_FILE, PAIRS_FILE]),
            &[MODEL_FILE, TRAIN_LOG_FILE],
        ))
    }

    fn index(&self) -> Result<StageResult> {
        let corpus = self.load_corpus()?;
        let table = self.load_embeddings()?;
        let model = QuantizerModel::load(&self.artifact(MODEL_FILE))?;
        let indexed = index_corpus(&model, &corpus, &table)?;
        write_assignments(&self.artifact(ASSIGNMENTS_FILE), &indexed.assignments(&corpus))?;
        Ok(StageResult::new(
            Inputs::artifacts(&[CORPUS_FILE, EMBEDDINGS_FILE, EMBEDDINGS_DATA_FILE, MODEL_FILE]),
            &[ASSIGNMENTS_FILE],
        ))
    }

    fn load_index(&self, corpus: &Corpus) -> Result<IndexedCorpus> {
        IndexedCorpus::from_assignments(corpus, &read_assignments(&self.artifact(ASSIGNMENTS_FILE))?)
    }

    fn retrieve(&self) -> Result<StageResult> {
        let corpus = self.load_corpus()?;
        let indexed = self.load_index(&corpus)?;
        let vz = Vectorizer::build(&corpus)?;
        let r = &self.config.retrieval;
        let mut selections = Vec::new();
        for e in 0..indexed.entity_ids().len() {
            let raw = indexed.select_top_k(e, r.k, r.alpha)?;
            selections.push(postprocess_clusters(&raw, &corpus, &vz, r.drop_threshold, r.merge_threshold)?);
        }
        write_selections(&self.artifact(SELECTIONS_FILE), &selections)?;
        write_atomic(
            &self.artifact(HISTOGRAM_FILE),
            depth_histogram_csv(&depth_histogram(&selections)).as_bytes(),
        )?;
        Ok(StageResult::new(
            Inputs::artifacts(&[CORPUS_FILE, ASSIGNMENTS_FILE]),
            &[SELECTIONS_FILE, HISTOGRAM_FILE],
        ))
    }

    fn summarize(&self) -> Result<StageResult> {
        let corpus = self.load_corpus()?;
        let g = &self.config.generation;
        let llm = g.backend.build(&self.base_dir)?;
        let zero_shot = g.mode == SummaryMode::ZeroShot;
        let selections = if zero_shot {
            Vec::new()
        } else {
            read_selections(&self.artifact(SELECTIONS_FILE))?
        };
        let vz = Vectorizer::build(&corpus)?;
        let mut all = Vec::new();
        let mut outputs = vec![SUMMARIES_FILE.to_string()];
        for sample in 0..g.samples {
            let mut rng = substream(self.config.seed, &format!("sampling/{sample}"));
            let mut batch = Vec::new();
            if zero_shot {
                for e in 0..corpus.entities().len() {
                    batch.push(summarize_zero_shot(&corpus, e, llm.as_ref(), g, sample, &mut rng)?);
                }
            } else {
                for sel in &selections {
                    let e = corpus.entity_index(sel.entity_id.as_str()).ok_or_else(|| Error::UnknownId {
                        kind: "entity",
                        id: sel.entity_id.to_string(),
                    })?;
                    let name = &corpus.entities()[e].name;
                    batch.push(match g.mode {
                        SummaryMode::Ext => summarize_ext(sel, &corpus, sample)?,
                        SummaryMode::Sent => summarize_sent(sel, &corpus, &vz, llm.as_ref(), name, g, sample)?,
                        SummaryMode::Doc => summarize_doc(sel, &corpus, &vz, llm.as_ref(), name, g, sample)?,
                        SummaryMode::ZeroShot => unreachable!("handled above"),
                    });
                }
            }
            let name = sample_file(sample);
            write_summaries(&self.artifact(&name), &batch)?;
            outputs.push(name);
            all.extend(batch);
        }
        write_summaries(&self.artifact(SUMMARIES_FILE), &all)?;
        let inputs = if zero_shot {
            Inputs::artifacts(&[CORPUS_FILE])
        } else {
            Inputs::artifacts(&[CORPUS_FILE, SELECTIONS_FILE])
        };
        Ok(StageResult {
            inputs,
            outputs,
            message: None,
        })
    }

    fn evaluate(&self) -> Result<StageResult> {
        let cfg = &self.config;
        let corpus = self.load_corpus()?;
        let summaries = read_summaries(&self.artifact(SUMMARIES_FILE))?;
        let zero_shot = cfg.generation.mode == SummaryMode::ZeroShot;
        let selections = if zero_shot {
            Vec::new()
        } else {
            read_selections(&self.artifact(SELECTIONS_FILE))?
        };
        let references = match &cfg.paths.references {
            Some(p) => Some(read_references(&self.resolve(p))?),
            None => None,
        };
        let nli = self.nli()?;
        let threshold = cfg.pairing.entail_threshold;
        let vz = Vectorizer::build(&corpus)?;

        let entity_metrics = evaluate_summaries(
            &corpus,
            &summaries,
            &selections,
            references.as_ref(),
            nli.as_ref(),
            threshold,
            cfg,
        )?;
        let aggregate = AggregateMetrics::from_entities(&entity_metrics);

        let clusters = if zero_shot {
            ClusterMetrics {
                similarity: cfg.eval.similarity,
                retrieved: None,
                by_depth: Vec::new(),
            }
        } else {
            let indexed = self.load_index(&corpus)?;
            let nli_sim = NliSimilarity {
                corpus: &corpus,
                nli: nli.as_ref(),
            };
            let sim: &dyn PairSimilarity = match cfg.eval.similarity {
                SimilarityMode::Tfidf => &vz,
                SimilarityMode::Nli => &nli_sim,
            };
            cluster_metrics(&corpus, &indexed, &selections, sim, cfg)?
        };

        let report = EvalReport {
            version: REPORT_VERSION,
            mode: cfg.generation.mode.as_str().to_string(),
            alpha_sap: cfg.eval.alpha_sap,
            nli_backend: nli.id(),
            entities: entity_metrics,
            aggregate,
            clusters,
            config: serde_json::to_value(cfg)?,
        };
        write_atomic(&self.artifact(REPORT_JSON_FILE), serde_json::to_string_pretty(&report)?.as_bytes())?;
        write_atomic(&self.artifact(REPORT_CSV_FILE), report.to_csv().as_bytes())?;

        let mut artifacts = vec![CORPUS_FILE, SUMMARIES_FILE];
        if !zero_shot {
            artifacts.extend([ASSIGNMENTS_FILE, SELECTIONS_FILE]);
        }
        Ok(StageResult::new(
            Inputs {
                artifacts: artifacts.into_iter().map(String::from).collect(),
                external: self.external_inputs(Stage::Evaluate),
            },
            &[REPORT_JSON_FILE, REPORT_CSV_FILE],
        ))
    }

    fn report(&self) -> Result<StageResult> {
        let raw = fs::read_to_string(self.artifact(REPORT_JSON_FILE)).map_err(|e| Error::io(self.artifact(REPORT_JSON_FILE), e))?;
        let report: EvalReport = serde_json::from_str(&raw)?;
        if report.version != REPORT_VERSION {
            return Err(Error::Version {
                what: "report",
                found: report.version,
                expected: REPORT_VERSION,
            });
        }
        let md = render_markdown(&report);
        write_atomic(&self.artifact(REPORT_MD_FILE), md.as_bytes())?;
        let mut r = StageResult::new(Inputs::artifacts(&[REPORT_JSON_FILE]), &[REPORT_MD_FILE]);
        r.message = Some(md);
        Ok(r)
    }
}

fn path_key(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

struct Inputs {
    artifacts: Vec<String>,
    external: Vec<String>,
}

impl Inputs {
    fn artifacts(names: &[&str]) -> Self {
        Self {
            artifacts: names.iter().map(|s| s.to_string()).collect(),
            external: vec![],
        }
    }
}

struct StageResult {
    inputs: Inputs,
    outputs: Vec<String>,
    message: Option<String>,
}

impl StageResult {
    fn new(inputs: Inputs, outputs: &[&str]) -> Self {
        Self {
            inputs,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            message: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceLine {
    entity_id: EntityId,
    summary: String,
}

/// Reference summaries, one JSON object per line; an entity may have
/// several.
pub fn read_references(path: &Path) -> Result<BTreeMap<EntityId, Vec<String>>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<EntityId, Vec<String>> = BTreeMap::new();
    for (n, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ReferenceLine = serde_json::from_str(line).map_err(|e| Error::Ingest {
            line: n + 1,
            message: e.to_string(),
        })?;
        out.entry(r.entity_id).or_default().push(r.summary);
    }
    Ok(out)
}

#[derive(Default)]
struct Acc {
    prevalence: Vec<f64>,
    genericness: Vec<f64>,
    rouge2: Vec<f64>,
    rouge_l: Vec<f64>,
    partial: Vec<f64>,
    majority: Vec<f64>,
}

fn avg(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn avg_opt(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| avg(xs))
}

fn sentence_texts<'c>(corpus: &'c Corpus, ids: &[SentenceId]) -> Result<Vec<&'c str>> {
    ids.iter()
        .map(|id| {
            corpus
                .sentence_index(id.as_str())
                .map(|i| corpus.sentences()[i].text.as_str())
                .ok_or_else(|| Error::UnknownId {
                    kind: "sentence",
                    id: id.to_string(),
                })
        })
        .collect()
}

/// Evidence clusters backing each sentence of a summary.
fn evidence_per_sentence<'c>(s: &Summary, corpus: &'c Corpus) -> Result<Vec<Vec<Vec<&'c str>>>> {
    let clusters: Vec<Vec<&str>> = s
        .evidence
        .iter()
        .map(|e| sentence_texts(corpus, &e.sentence_ids))
        .collect::<Result<_>>()?;
    match s.mode {
        SummaryMode::Doc => Ok(vec![clusters; s.sentences.len()]),
        _ if clusters.len() == s.sentences.len() => Ok(clusters.into_iter().map(|c| vec![c]).collect()),
        _ => Err(Error::format(
            "summary",
            format!(
                "{} summary for {} has {} sentences but {} evidence clusters",
                s.mode.as_str(),
                s.entity_id,
                s.sentences.len(),
                s.evidence.len()
            ),
        )),
    }
}

/// Per-entity metrics, each averaged over the summary samples.
pub fn evaluate_summaries(
    corpus: &Corpus,
    summaries: &[Summary],
    selections: &[ClusterSelection],
    references: Option<&BTreeMap<EntityId, Vec<String>>>,
    nli: &dyn EntailmentClient,
    threshold: f64,
    config: &PipelineConfig,
) -> Result<Vec<EntityMetrics>> {
    let mut by_sample: BTreeMap<usize, Vec<&Summary>> = BTreeMap::new();
    for s in summaries {
        by_sample.entry(s.sample).or_default().push(s);
    }
    let mut acc: BTreeMap<usize, Acc> = BTreeMap::new();
    for (sample, batch) in &by_sample {
        let entity_of = |s: &Summary| {
            corpus.entity_index(s.entity_id.as_str()).ok_or_else(|| Error::UnknownId {
                kind: "entity",
                id: s.entity_id.to_string(),
            })
        };
        let gens = if batch.len() >= 2 {
            let sents: Vec<Vec<String>> = batch.iter().map(|s| s.sentences.clone()).collect();
            genericness(&sents, nli, threshold)?
        } else {
            tracing::warn!(sample, "genericness needs two or more entities; reporting 0");
            vec![0.0; batch.len()]
        };
        for (s, g) in batch.iter().zip(gens) {
            let e = entity_of(s)?;
            let reviews: Vec<Vec<&str>> = corpus
                .entity_reviews(e)
                .iter()
                .map(|&r| {
                    corpus
                        .review_sentences(r)
                        .iter()
                        .map(|&i| corpus.sentences()[i].text.as_str())
                        .collect()
                })
                .collect();
            let a = acc.entry(e).or_default();
            a.prevalence.push(prevalence(&s.sentences, &reviews, nli, threshold)?);
            a.genericness.push(g);
            if s.mode != SummaryMode::ZeroShot {
                let evidence = evidence_per_sentence(s, corpus)?;
                let items: Vec<AttributionItem<'_>> = s
                    .sentences
                    .iter()
                    .zip(evidence)
                    .map(|(sentence, evidence)| AttributionItem {
                        sentence: sentence.as_str(),
                        evidence,
                    })
                    .collect();
                let (p, m) = attribution_support(&items, nli, threshold)?;
                a.partial.push(p);
                a.majority.push(m);
            }
            if let Some(refs) = references.and_then(|r| r.get(&s.entity_id)) {
                a.rouge2.push(rouge_multi(&s.text, refs, RougeVariant::R2F1));
                a.rouge_l.push(rouge_multi(&s.text, refs, RougeVariant::RlF1));
            }
        }
    }

    let selection_of: HashMap<&EntityId, &ClusterSelection> = selections.iter().map(|s| (&s.entity_id, s)).collect();
    let mut ref_rng = substream(config.seed, "references");
    let mut out = Vec::new();
    for (e, a) in acc {
        let entity = &corpus.entities()[e];
        let ari = match (references.and_then(|r| r.get(&entity.id)), selection_of.get(&entity.id)) {
            (Some(refs), Some(sel)) if !refs.is_empty() => {
                let reference = &refs[ref_rng.random_range(0..refs.len())];
                let sentences: Vec<(SentenceId, &str)> = corpus
                    .entity_sentences(e)
                    .into_iter()
                    .map(|i| (corpus.sentences()[i].id.clone(), corpus.sentences()[i].text.as_str()))
                    .collect();
                let oracle = oracle_clusters(reference, &sentences, config.eval.oracle_threshold);
                let retrieved: Vec<Vec<SentenceId>> = sel.clusters.iter().map(|c| c.sentence_ids.clone()).collect();
                match cluster_ari(&retrieved, &oracle) {
                    Ok(v) => Some(v),
                    Err(err) => {
                        tracing::warn!(entity = %entity.id, %err, "ARI undefined");
                        None
                    }
                }
            }
            _ => None,
        };
        let (p, g) = (avg(&a.prevalence), avg(&a.genericness));
        out.push(EntityMetrics {
            entity_id: entity.id.clone(),
            samples: a.prevalence.len(),
            prevalence: p,
            genericness: g,
            sap: sap(p, g, config.eval.alpha_sap),
            rouge2_f1: avg_opt(&a.rouge2),
            rouge_l_f1: avg_opt(&a.rouge_l),
            partial_support_pct: avg_opt(&a.partial),
            majority_support_pct: avg_opt(&a.majority),
            ari,
        });
    }
    Ok(out)
}

/// Quality of the retrieved clusters (mean over entities with at least two
/// clusters) and of the whole index at every depth.
pub fn cluster_metrics(
    corpus: &Corpus,
    indexed: &IndexedCorpus,
    selections: &[ClusterSelection],
    sim: &dyn PairSimilarity,
    config: &PipelineConfig,
) -> Result<ClusterMetrics> {
    let mut per_entity: Vec<ClusterQuality> = Vec::new();
    let mut rng = substream(config.seed, "quality/retrieved");
    for sel in selections {
        let clusters: Vec<Vec<usize>> = sel
            .clusters
            .iter()
            .map(|c| {
                c.sentence_ids
                    .iter()
                    .map(|id| {
                        corpus.sentence_index(id.as_str()).ok_or_else(|| Error::UnknownId {
                            kind: "sentence",
                            id: id.to_string(),
                        })
                    })
                    .collect::<Result<Vec<usize>>>()
            })
            .collect::<Result<_>>()?;
        match cluster_quality(&clusters, sim, MAX_EXHAUSTIVE_PAIRS, &mut rng) {
            Ok(q) => per_entity.push(q),
            Err(Error::Precondition(m)) => tracing::debug!(entity = %sel.entity_id, "skipping cluster quality: {m}"),
            Err(e) => return Err(e),
        }
    }
    let retrieved = (!per_entity.is_empty()).then(|| {
        let purity = avg(&per_entity.iter().map(|q| q.purity).collect::<Vec<_>>());
        let colocation = avg(&per_entity.iter().map(|q| q.colocation).collect::<Vec<_>>());
        ClusterQuality {
            purity,
            colocation,
            quality: purity - colocation,
        }
    });
    let mut by_depth = Vec::new();
    for depth in 1..=indexed.depth() {
        let clusters = clusters_at_depth(indexed.paths(), depth);
        let mut rng = substream(config.seed, &format!("quality/depth{depth}"));
        match cluster_quality(&clusters, sim, MAX_EXHAUSTIVE_PAIRS, &mut rng) {
            Ok(quality) => by_depth.push(HierarchyQuality { depth, quality }),
            Err(Error::Precondition(m)) => tracing::debug!(depth, "skipping depth: {m}"),
            Err(e) => return Err(e),
        }
    }
    Ok(ClusterMetrics {
        similarity: config.eval.similarity,
        retrieved,
        by_depth,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Markdown rendering of a report.
pub fn render_markdown(report: &EvalReport) -> String {
    let mut md = String::from("# Evaluation report\n\n");
    let _ = writeln!(
        md,
        "mode `{}`, NLI backend `{}`, alpha_sap {}\n",
        report.mode, report.nli_backend, report.alpha_sap
    );
    md.push_str("| entity | samples | prevalence | genericness | SAP | R-2 F1 | R-L F1 | partial % | majority % | ARI |\n");
    md.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for e in &report.entities {
        let _ = writeln!(
            md,
            "| {} | {} | {:.4} | {:.4} | {:.4} | {} | {} | {} | {} | {} |",
            e.entity_id,
            e.samples,
            e.prevalence,
            e.genericness,
            e.sap,
            fmt_opt(e.rouge2_f1),
            fmt_opt(e.rouge_l_f1),
            fmt_opt(e.partial_support_pct),
            fmt_opt(e.majority_support_pct),
            fmt_opt(e.ari)
        );
    }
    let a = &report.aggregate;
    let _ = writeln!(
        md,
        "| **all ({})** | | {:.4} | {:.4} | {:.4} | {} | {} | {} | {} | {} |",
        a.entities,
        a.prevalence,
        a.genericness,
        a.sap,
        fmt_opt(a.rouge2_f1),
        fmt_opt(a.rouge_l_f1),
        fmt_opt(a.partial_support_pct),
        fmt_opt(a.majority_support_pct),
        fmt_opt(a.ari)
    );
    let c = &report.clusters;
    if c.retrieved.is_some() || !c.by_depth.is_empty() {
        let sim = match c.similarity {
            SimilarityMode::Tfidf => "tf-idf",
            SimilarityMode::Nli => "NLI",
        };
        let _ = writeln!(md, "\n## Cluster quality ({sim} similarity)\n");
        md.push_str("| clusters | purity | colocation | quality |\n|---|---|---|---|\n");
        if let Some(q) = &c.retrieved {
            let _ = writeln!(md, "| retrieved | {:.4} | {:.4} | {:.4} |", q.purity, q.colocation, q.quality);
        }
        for h in &c.by_depth {
            let q = &h.quality;
            let _ = writeln!(md, "| depth {} | {:.4} | {:.4} | {:.4} |", h.depth, q.purity, q.colocation, q.quality);
        }
    }
    md
}
