//! Summaries from retrieved clusters: extractive centroids, one LLM sentence
//! per cluster, or one LLM summary over all clusters.

mod llm;

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use llm::{
    HttpLlm, LlmBackend, LlmClient, LlmRequest, MockLlm, RecordingLlm, ReplayRecord, LLM_API_KEY_ENV, LLM_ENDPOINT_ENV,
};

use crate::corpus::{split_sentences, tokenize, Corpus, Vectorizer};
use crate::error::{Error, Result};
use crate::eval::rouge2_tokens;
use crate::ids::{EntityId, SentenceId};
use crate::quantizer::CodePath;
use crate::retriever::{Cluster, ClusterSelection};

const SENT_TEMPLATE: &str = include_str!("../../prompts/sent.txt");
const DOC_TEMPLATE: &str = include_str!("../../prompts/doc.txt");
const ZERO_SHOT_REVIEW: &str = include_str!("../../prompts/zero_shot_review.txt");
const ZERO_SHOT_TAIL: &str = include_str!("../../prompts/zero_shot.txt");

/// Text substituted for an empty completion.
pub const PLACEHOLDER: &str = "[no summary generated]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SummaryMode {
    Ext,
    Sent,
    #[default]
    Doc,
    /// Baseline: the LLM reads a sample of raw reviews, no retrieval.
    ZeroShot,
}

impl SummaryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SummaryMode::Ext => "ext",
            SummaryMode::Sent => "sent",
            SummaryMode::Doc => "doc",
            SummaryMode::ZeroShot => "zero_shot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub mode: SummaryMode,
    pub temperature: f64,
    /// Independent samples per entity.
    pub samples: usize,
    pub backend: LlmBackend,
    /// Maximum characters of sentence list in a document-mode prompt.
    pub char_budget: usize,
    /// Concurrent LLM requests.
    pub parallelism: usize,
    /// Reviews shown to the zero-shot baseline.
    pub zero_shot_reviews: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            mode: SummaryMode::Doc,
            temperature: 0.7,
            samples: 3,
            backend: LlmBackend::Echo,
            char_budget: 12_000,
            parallelism: 4,
            zero_shot_reviews: 8,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config("generation.temperature must be a finite value >= 0".into()));
        }
        if self.samples == 0 || self.parallelism == 0 || self.zero_shot_reviews == 0 {
            return Err(Error::Config("generation.samples, parallelism and zero_shot_reviews must be >= 1".into()));
        }
        if self.char_budget == 0 {
            return Err(Error::Config("generation.char_budget must be >= 1".into()));
        }
        Ok(())
    }
}

/// A cluster cited as evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub subpath: CodePath,
    pub sentence_ids: Vec<SentenceId>,
}

impl From<&Cluster> for EvidenceRef {
    fn from(c: &Cluster) -> Self {
        Self {
            subpath: c.subpath.clone(),
            sentence_ids: c.sentence_ids.clone(),
        }
    }
}

/// A generated summary. In `ext` and `sent` mode `evidence[i]` backs
/// `sentences[i]`; in `doc` mode `evidence` is the whole selection and backs
/// every sentence; zero-shot summaries carry none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub entity_id: EntityId,
    pub mode: SummaryMode,
    pub sample: usize,
    pub text: String,
    pub sentences: Vec<String>,
    pub evidence: Vec<EvidenceRef>,
    pub model: String,
    pub temperature: f64,
    /// Warnings such as `empty_selection`, `placeholder:2` or `truncated:40/95`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl Summary {
    fn new(entity_id: EntityId, mode: SummaryMode, sample: usize, model: String, temperature: f64) -> Self {
        Self {
            entity_id,
            mode,
            sample,
            text: String::new(),
            sentences: Vec::new(),
            evidence: Vec::new(),
            model,
            temperature,
            flags: Vec::new(),
        }
    }

    fn finish(mut self) -> Self {
        self.text = self.sentences.join(" ");
        self
    }
}

/// Fill `{name}` slots of a template.
fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in slots {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Prompt asking for one sentence about a single cluster.
///
/// ```
/// let p = hiro::generation::sent_prompt("Hotel Azur", &["Great pool.", "Pool was warm."]);
/// assert!(p.starts_with("Here is a list of sentences taken from reviews of the Hotel Azur:\n\nGreat pool.\nPool was warm.\n\n"));
/// assert!(p.ends_with("write a single concise sentence that includes the main point:\n"));
/// ```
pub fn sent_prompt<S: AsRef<str>>(entity_name: &str, sentences: &[S]) -> String {
    let list: Vec<&str> = sentences.iter().map(AsRef::as_ref).collect();
    render(SENT_TEMPLATE, &[("entity_name", entity_name), ("sentences", &list.join("\n"))])
}

/// Prompt asking for a short summary of every retrieved sentence.
pub fn doc_prompt<S: AsRef<str>>(entity_name: &str, sentences: &[S]) -> String {
    let list: Vec<&str> = sentences.iter().map(AsRef::as_ref).collect();
    render(DOC_TEMPLATE, &[("entity_name", entity_name), ("sentences", &list.join("\n"))])
}

/// Baseline prompt listing whole reviews.
pub fn zero_shot_prompt<S: AsRef<str>>(reviews: &[S]) -> String {
    let mut out = String::new();
    for r in reviews {
        out.push_str(&render(ZERO_SHOT_REVIEW, &[("review", r.as_ref())]));
    }
    out.push_str(ZERO_SHOT_TAIL);
    out
}

/// Index of the member with the highest mean ROUGE-2 F1 against the other
/// members. Ties go to the smallest sentence id.
pub fn centroid_sentence(cluster: &[(SentenceId, &str)]) -> Result<usize> {
    if cluster.is_empty() {
        return Err(Error::Precondition("centroid of an empty cluster".into()));
    }
    let tokens: Vec<Vec<String>> = cluster.iter().map(|(_, t)| tokenize(t)).collect();
    let n = cluster.len();
    let mut best: Option<(f64, usize)> = None;
    for i in 0..n {
        let mean = if n == 1 {
            0.0
        } else {
            (0..n).filter(|&j| j != i).map(|j| rouge2_tokens(&tokens[i], &tokens[j])).sum::<f64>() / (n - 1) as f64
        };
        best = match best {
            Some((m, b)) if m > mean || (m == mean && cluster[b].0 <= cluster[i].0) => Some((m, b)),
            _ => Some((mean, i)),
        };
    }
    Ok(best.expect("non-empty").1)
}

fn resolve_texts<'c>(cluster: &Cluster, corpus: &'c Corpus) -> Result<Vec<(SentenceId, &'c str, usize)>> {
    cluster
        .sentence_ids
        .iter()
        .map(|id| {
            let i = corpus.sentence_index(id.as_str()).ok_or_else(|| Error::UnknownId {
                kind: "sentence",
                id: id.to_string(),
            })?;
            Ok((id.clone(), corpus.sentences()[i].text.as_str(), i))
        })
        .collect()
}

/// Cluster members ordered by mean tf-idf cosine to the rest of the
/// cluster, highest first; ties by sentence id.
pub fn order_by_centrality<'c>(members: &[(SentenceId, &'c str, usize)], vectorizer: &Vectorizer) -> Vec<(SentenceId, &'c str, usize)> {
    let n = members.len();
    let mut scored: Vec<(f64, &(SentenceId, &str, usize))> = members
        .iter()
        .map(|m| {
            let c = if n < 2 {
                0.0
            } else {
                members.iter().filter(|o| o.2 != m.2).map(|o| vectorizer.sim(m.2, o.2)).sum::<f64>() / (n - 1) as f64
            };
            (c, m)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1 .0.cmp(&b.1 .0)));
    scored.into_iter().map(|(_, m)| m.clone()).collect()
}

/// One verbatim centroid sentence per cluster, in cluster order.
pub fn summarize_ext(selection: &ClusterSelection, corpus: &Corpus, sample: usize) -> Result<Summary> {
    let mut s = Summary::new(selection.entity_id.clone(), SummaryMode::Ext, sample, "extractive".into(), 0.0);
    if selection.clusters.is_empty() {
        tracing::warn!(entity = %selection.entity_id, "empty selection, empty extractive summary");
        s.flags.push("empty_selection".into());
        return Ok(s.finish());
    }
    for c in &selection.clusters {
        let members = resolve_texts(c, corpus)?;
        let pairs: Vec<(SentenceId, &str)> = members.iter().map(|(id, t, _)| (id.clone(), *t)).collect();
        let best = centroid_sentence(&pairs)?;
        s.sentences.push(pairs[best].1.to_string());
        s.evidence.push(c.into());
    }
    Ok(s.finish())
}

fn thread_pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// One LLM sentence per cluster; each sentence cites its cluster.
pub fn summarize_sent(
    selection: &ClusterSelection,
    corpus: &Corpus,
    vectorizer: &Vectorizer,
    llm: &dyn LlmClient,
    entity_name: &str,
    config: &GenerationConfig,
    sample: usize,
) -> Result<Summary> {
    let mut s = Summary::new(selection.entity_id.clone(), SummaryMode::Sent, sample, llm.id(), config.temperature);
    if selection.clusters.is_empty() {
        tracing::warn!(entity = %selection.entity_id, "empty selection, empty summary");
        s.flags.push("empty_selection".into());
        return Ok(s.finish());
    }
    let prompts = selection
        .clusters
        .iter()
        .map(|c| {
            let ordered = order_by_centrality(&resolve_texts(c, corpus)?, vectorizer);
            let texts: Vec<&str> = ordered.iter().map(|m| m.1).collect();
            Ok(sent_prompt(entity_name, &texts))
        })
        .collect::<Result<Vec<_>>>()?;
    let responses = thread_pool(config.parallelism)?.install(|| {
        prompts
            .par_iter()
            .map(|p| {
                llm.complete(&LlmRequest {
                    prompt: p.clone(),
                    max_words: 10,
                    temperature: config.temperature,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (i, (c, resp)) in selection.clusters.iter().zip(responses).enumerate() {
        match split_sentences(resp.trim()).into_iter().next() {
            Some(first) => s.sentences.push(first),
            None => {
                s.sentences.push(PLACEHOLDER.into());
                s.flags.push(format!("placeholder:{i}"));
            }
        }
        s.evidence.push(c.into());
    }
    Ok(s.finish())
}

/// Evenly spaced picks of `m` out of `n` items.
fn even_picks(n: usize, m: usize) -> Vec<usize> {
    if m >= n {
        return (0..n).collect();
    }
    (0..m).map(|i| i * n / m).collect()
}

/// Sentences of all clusters for a document prompt: cluster order, each
/// cluster by centrality, duplicates dropped, and per-cluster subsampling
/// when the list would exceed `char_budget`. Returns the list and, if
/// subsampled, the number of sentences kept out of the total.
pub fn doc_sentences<'c>(
    selection: &ClusterSelection,
    corpus: &'c Corpus,
    vectorizer: &Vectorizer,
    char_budget: usize,
) -> Result<(Vec<&'c str>, Option<(usize, usize)>)> {
    let mut seen = std::collections::HashSet::new();
    let mut per_cluster: Vec<Vec<&str>> = Vec::new();
    for c in &selection.clusters {
        let ordered = order_by_centrality(&resolve_texts(c, corpus)?, vectorizer);
        per_cluster.push(ordered.into_iter().filter(|m| seen.insert(m.2)).map(|m| m.1).collect());
    }
    let total: usize = per_cluster.iter().map(Vec::len).sum();
    let assemble = |cap: usize| -> Vec<&'c str> {
        per_cluster
            .iter()
            .flat_map(|c| even_picks(c.len(), cap).into_iter().map(move |i| c[i]))
            .collect()
    };
    let size = |xs: &[&str]| xs.iter().map(|x| x.len() + 1).sum::<usize>().saturating_sub(1);
    let longest = per_cluster.iter().map(Vec::len).max().unwrap_or(0);
    let full = assemble(longest);
    if size(&full) <= char_budget {
        return Ok((full, None));
    }
    let mut cap = longest;
    let mut picked = full;
    while cap > 1 {
        cap -= 1;
        picked = assemble(cap);
        if size(&picked) <= char_budget {
            break;
        }
    }
    let kept = picked.len();
    Ok((picked, Some((kept, total))))
}

/// One LLM summary over the sentences of all clusters.
pub fn summarize_doc(
    selection: &ClusterSelection,
    corpus: &Corpus,
    vectorizer: &Vectorizer,
    llm: &dyn LlmClient,
    entity_name: &str,
    config: &GenerationConfig,
    sample: usize,
) -> Result<Summary> {
    if selection.clusters.is_empty() {
        return Err(Error::Precondition(format!("document summary of {} needs a non-empty selection", selection.entity_id)));
    }
    let mut s = Summary::new(selection.entity_id.clone(), SummaryMode::Doc, sample, llm.id(), config.temperature);
    let (sentences, truncated) = doc_sentences(selection, corpus, vectorizer, config.char_budget)?;
    if let Some((kept, total)) = truncated {
        tracing::warn!(entity = %selection.entity_id, kept, total, "document prompt subsampled");
        s.flags.push(format!("truncated:{kept}/{total}"));
    }
    let resp = llm.complete(&LlmRequest {
        prompt: doc_prompt(entity_name, &sentences),
        max_words: 60,
        temperature: config.temperature,
    })?;
    s.sentences = split_sentences(resp.trim());
    if s.sentences.is_empty() {
        s.sentences.push(PLACEHOLDER.into());
        s.flags.push("placeholder:0".into());
    }
    s.evidence = selection.clusters.iter().map(EvidenceRef::from).collect();
    Ok(s.finish())
}

/// Baseline: summarize a random sample of the entity's reviews directly.
pub fn summarize_zero_shot<R: Rng + ?Sized>(
    corpus: &Corpus,
    entity: usize,
    llm: &dyn LlmClient,
    config: &GenerationConfig,
    sample_index: usize,
    rng: &mut R,
) -> Result<Summary> {
    let e = &corpus.entities()[entity];
    let reviews = corpus.entity_reviews(entity);
    let n = config.zero_shot_reviews.min(reviews.len());
    let mut picks = sample(rng, reviews.len(), n).into_vec();
    picks.sort_unstable();
    let texts: Vec<String> = picks
        .iter()
        .map(|&r| {
            corpus
                .review_sentences(reviews[r])
                .iter()
                .map(|&s| corpus.sentences()[s].text.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let resp = llm.complete(&LlmRequest {
        prompt: zero_shot_prompt(&texts),
        max_words: 70,
        temperature: config.temperature,
    })?;
    let mut s = Summary::new(e.id.clone(), SummaryMode::ZeroShot, sample_index, llm.id(), config.temperature);
    s.sentences = split_sentences(resp.trim());
    if s.sentences.is_empty() {
        s.sentences.push(PLACEHOLDER.into());
        s.flags.push("placeholder:0".into());
    }
    Ok(s.finish())
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    entity_id: EntityId,
    mode: SummaryMode,
    sample: usize,
    text: String,
    evidence: Vec<EvidenceRef>,
    sentences: Vec<String>,
    model: String,
    temperature: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    flags: Vec<String>,
}

/// One JSON object per line.
pub fn write_summaries(path: &Path, summaries: &[Summary]) -> Result<()> {
    let mut out = String::new();
    for s in summaries {
        let line = SummaryLine {
            entity_id: s.entity_id.clone(),
            mode: s.mode,
            sample: s.sample,
            text: s.text.clone(),
            evidence: s.evidence.clone(),
            sentences: s.sentences.clone(),
            model: s.model.clone(),
            temperature: s.temperature,
            flags: s.flags.clone(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    crate::io::write_atomic(path, out.as_bytes())
}

pub fn read_summaries(path: &Path) -> Result<Vec<Summary>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let x: SummaryLine = serde_json::from_str(l)?;
            Ok(Summary {
                entity_id: x.entity_id,
                mode: x.mode,
                sample: x.sample,
                text: x.text,
                sentences: x.sentences,
                evidence: x.evidence,
                model: x.model,
                temperature: x.temperature,
                flags: x.flags,
            })
        })
        .collect()
}
