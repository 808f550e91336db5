//! Per-entity subpath popularity and retrieval of evidence clusters.
//!
//! Every sentence is encoded to a full path. A review "contains" a subpath
//! when one of its sentences has that subpath as a prefix. Subpaths are
//! scored by how many of an entity's reviews contain them, relative to the
//! mean across all entities, and the top scorers become clusters.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vectorizer};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ids::{EntityId, ReviewId, SentenceId};
use crate::quantizer::{CodePath, QuantizerModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Subpaths selected per entity.
    pub k: usize,
    /// Smoothing constant of the inverse baseline popularity.
    pub alpha: f64,
    pub drop_threshold: f64,
    pub merge_threshold: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 8,
            alpha: 6.0,
            drop_threshold: 0.05,
            merge_threshold: 0.5,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("retrieval.k must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config("retrieval.alpha must be a finite value >= 0".into()));
        }
        for (name, v) in [("drop_threshold", self.drop_threshold), ("merge_threshold", self.merge_threshold)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("retrieval.{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// One line of `assignments.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub sentence_id: SentenceId,
    pub entity_id: EntityId,
    pub review_id: ReviewId,
    pub path: CodePath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubpathScore {
    pub subpath: CodePath,
    pub tp: f64,
    pub ibp: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub subpath: CodePath,
    pub score: f64,
    /// Labels of clusters folded into this one during post-processing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged_subpaths: Vec<CodePath>,
    pub sentence_ids: Vec<SentenceId>,
}

impl Cluster {
    /// The cluster label followed by any merged labels.
    pub fn subpaths(&self) -> impl Iterator<Item = &CodePath> {
        std::iter::once(&self.subpath).chain(&self.merged_subpaths)
    }
}

/// Retrieved clusters of one entity, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSelection {
    pub entity_id: EntityId,
    pub k: usize,
    pub alpha: f64,
    pub clusters: Vec<Cluster>,
}

impl ClusterSelection {
    pub fn sentence_count(&self) -> usize {
        self.clusters.iter().map(|c| c.sentence_ids.len()).sum()
    }
}

/// Sentence paths plus per-review subpath sets and occurrence counts.
#[derive(Debug, Clone)]
pub struct IndexedCorpus {
    depth: usize,
    entity_ids: Vec<EntityId>,
    entity_index: HashMap<EntityId, usize>,
    sentence_ids: Vec<SentenceId>,
    paths: Vec<CodePath>,
    sentence_review: Vec<usize>,
    entity_sentences: Vec<Vec<usize>>,
    review_entity: Vec<usize>,
    review_sets: Vec<BTreeSet<CodePath>>,
    /// Per entity: subpath -> number of the entity's reviews containing it.
    entity_counts: Vec<BTreeMap<CodePath, usize>>,
    entity_review_totals: Vec<usize>,
    /// Subpath -> number of reviews containing it across the corpus.
    global_counts: BTreeMap<CodePath, usize>,
    /// Subpath -> sum of term popularity over all entities.
    tp_sum: HashMap<CodePath, f64>,
}

/// Encode every sentence of `corpus` and build the index.
pub fn index_corpus(model: &QuantizerModel, corpus: &Corpus, embeddings: &EmbeddingTable) -> Result<IndexedCorpus> {
    let paths = corpus
        .sentences()
        .iter()
        .map(|s| {
            let e = embeddings
                .get_f64(s.id.as_str())
                .ok_or_else(|| Error::MissingEmbedding(s.id.to_string()))?;
            if e.len() != model.dim {
                return Err(Error::Config(format!(
                    "embedding of {} has dimension {}, model expects {}",
                    s.id,
                    e.len(),
                    model.dim
                )));
            }
            Ok(model.encode(&e))
        })
        .collect::<Result<Vec<_>>>()?;
    IndexedCorpus::from_paths(corpus, paths)
}

impl IndexedCorpus {
    /// Build the index from precomputed full paths, one per corpus sentence.
    pub fn from_paths(corpus: &Corpus, paths: Vec<CodePath>) -> Result<Self> {
        if paths.len() != corpus.sentences().len() {
            return Err(Error::Precondition(format!(
                "{} paths for {} sentences",
                paths.len(),
                corpus.sentences().len()
            )));
        }
        let depth = paths.first().map_or(0, CodePath::depth);
        if depth == 0 || paths.iter().any(|p| p.depth() != depth) {
            return Err(Error::Precondition("paths must be non-empty and of equal depth".into()));
        }
        let n_entities = corpus.entities().len();
        let n_reviews = corpus.reviews().len();

        let mut review_sets = vec![BTreeSet::new(); n_reviews];
        for (s, path) in paths.iter().enumerate() {
            review_sets[corpus.review_of(s)].extend(path.prefixes());
        }
        let review_entity: Vec<usize> = (0..n_reviews).map(|r| corpus.entity_of_review(r)).collect();
        let mut entity_counts = vec![BTreeMap::new(); n_entities];
        let mut global_counts = BTreeMap::new();
        for (r, set) in review_sets.iter().enumerate() {
            for sp in set {
                *entity_counts[review_entity[r]].entry(sp.clone()).or_insert(0) += 1;
                *global_counts.entry(sp.clone()).or_insert(0) += 1;
            }
        }
        let entity_review_totals: Vec<usize> = (0..n_entities).map(|e| corpus.entity_reviews(e).len()).collect();

        // Sum in entity-id order so the result does not depend on input order.
        let mut by_id: Vec<usize> = (0..n_entities).collect();
        by_id.sort_by(|&a, &b| corpus.entities()[a].id.cmp(&corpus.entities()[b].id));
        let mut tp_sum: HashMap<CodePath, f64> = HashMap::new();
        for &e in &by_id {
            for (sp, &c) in &entity_counts[e] {
                *tp_sum.entry(sp.clone()).or_insert(0.0) += c as f64 / entity_review_totals[e] as f64;
            }
        }

        let entity_ids: Vec<EntityId> = corpus.entities().iter().map(|e| e.id.clone()).collect();
        Ok(Self {
            depth,
            entity_index: entity_ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect(),
            entity_ids,
            sentence_ids: corpus.sentences().iter().map(|s| s.id.clone()).collect(),
            sentence_review: (0..paths.len()).map(|s| corpus.review_of(s)).collect(),
            entity_sentences: (0..n_entities).map(|e| corpus.entity_sentences(e)).collect(),
            paths,
            review_entity,
            review_sets,
            entity_counts,
            entity_review_totals,
            global_counts,
            tp_sum,
        })
    }

    /// Rebuild from persisted assignments, which must cover the corpus exactly.
    pub fn from_assignments(corpus: &Corpus, assignments: &[Assignment]) -> Result<Self> {
        let mut paths: Vec<Option<CodePath>> = vec![None; corpus.sentences().len()];
        for a in assignments {
            let s = corpus.sentence_index(a.sentence_id.as_str()).ok_or_else(|| Error::UnknownId {
                kind: "sentence",
                id: a.sentence_id.to_string(),
            })?;
            paths[s] = Some(a.path.clone());
        }
        let paths = paths
            .into_iter()
            .enumerate()
            .map(|(s, p)| {
                p.ok_or_else(|| Error::Precondition(format!("no path assigned to sentence {}", corpus.sentences()[s].id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_paths(corpus, paths)
    }

    pub fn assignments(&self, corpus: &Corpus) -> Vec<Assignment> {
        corpus
            .sentences()
            .iter()
            .zip(&self.paths)
            .map(|(s, p)| Assignment {
                sentence_id: s.id.clone(),
                entity_id: s.entity_id.clone(),
                review_id: s.review_id.clone(),
                path: p.clone(),
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn entity_ids(&self) -> &[EntityId] {
        &self.entity_ids
    }

    pub fn entity(&self, id: &str) -> Option<usize> {
        self.entity_index.get(id).copied()
    }

    /// Full path of sentence `s` (corpus index).
    pub fn path(&self, s: usize) -> &CodePath {
        &self.paths[s]
    }

    pub fn paths(&self) -> &[CodePath] {
        &self.paths
    }

    /// Subpaths present in review `r` (corpus index), prefixes included.
    pub fn review_subpaths(&self, r: usize) -> &BTreeSet<CodePath> {
        &self.review_sets[r]
    }

    /// Number of reviews of `entity` containing `subpath`.
    pub fn review_count(&self, subpath: &CodePath, entity: usize) -> usize {
        self.entity_counts[entity].get(subpath).copied().unwrap_or(0)
    }

    /// Number of reviews in the whole corpus containing `subpath`.
    pub fn global_review_count(&self, subpath: &CodePath) -> usize {
        self.global_counts.get(subpath).copied().unwrap_or(0)
    }

    /// Number of sentences whose path starts with `subpath`, optionally
    /// restricted to one entity.
    pub fn sentence_count(&self, subpath: &CodePath, entity: Option<usize>) -> usize {
        match entity {
            Some(e) => self.entity_sentences[e]
                .iter()
                .filter(|&&s| subpath.is_prefix_of(&self.paths[s]))
                .count(),
            None => self.paths.iter().filter(|p| subpath.is_prefix_of(p)).count(),
        }
    }

    /// Fraction of the entity's reviews whose index contains `subpath`.
    pub fn term_popularity(&self, subpath: &CodePath, entity: usize) -> f64 {
        self.review_count(subpath, entity) as f64 / self.entity_review_totals[entity] as f64
    }

    /// Reciprocal of the smoothed mean term popularity across entities.
    pub fn inverse_baseline_popularity(&self, subpath: &CodePath, alpha: f64) -> Result<f64> {
        let sum = self.tp_sum.get(subpath).copied().unwrap_or(0.0);
        // One division, so closed forms such as 31/6 come out bit-exact.
        let denom = alpha + sum;
        if denom <= 0.0 {
            return Err(Error::ZeroBaseline);
        }
        Ok((alpha + self.entity_ids.len() as f64) / denom)
    }

    pub fn score_subpath(&self, subpath: &CodePath, entity: usize, alpha: f64) -> Result<SubpathScore> {
        let tp = self.term_popularity(subpath, entity);
        let ibp = self.inverse_baseline_popularity(subpath, alpha)?;
        Ok(SubpathScore {
            subpath: subpath.clone(),
            tp,
            ibp,
            score: tp * ibp,
        })
    }

    /// Every subpath occurring in the entity's reviews, scored and ranked:
    /// score descending, then shallower first, then smaller codes.
    pub fn ranked_subpaths(&self, entity: usize, alpha: f64) -> Result<Vec<SubpathScore>> {
        let mut scored = self.entity_counts[entity]
            .keys()
            .map(|sp| self.score_subpath(sp, entity, alpha))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.subpath.depth().cmp(&b.subpath.depth()))
                .then_with(|| a.subpath.cmp(&b.subpath))
        });
        Ok(scored)
    }

    /// The `k` best subpaths of `entity` with the sentences mapped under
    /// them. Sentence ids inside a cluster are sorted.
    pub fn select_top_k(&self, entity: usize, k: usize, alpha: f64) -> Result<ClusterSelection> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let entity_id = self.entity_ids[entity].clone();
        if self.entity_sentences[entity].is_empty() {
            return Err(Error::EmptyEntity(entity_id.to_string()));
        }
        let clusters = self
            .ranked_subpaths(entity, alpha)?
            .into_iter()
            .take(k)
            .map(|s| {
                let mut sentence_ids: Vec<SentenceId> = self.entity_sentences[entity]
                    .iter()
                    .filter(|&&i| s.subpath.is_prefix_of(&self.paths[i]))
                    .map(|&i| self.sentence_ids[i].clone())
                    .collect();
                sentence_ids.sort();
                Cluster {
                    subpath: s.subpath,
                    score: s.score,
                    merged_subpaths: Vec::new(),
                    sentence_ids,
                }
            })
            .collect();
        Ok(ClusterSelection {
            entity_id,
            k,
            alpha,
            clusters,
        })
    }

    /// Review index of sentence `s`.
    pub fn review_of(&self, s: usize) -> usize {
        self.sentence_review[s]
    }

    pub fn entity_of_review(&self, r: usize) -> usize {
        self.review_entity[r]
    }
}

fn mean_sim(vz: &Vectorizer, a: &[usize], b: &[usize], skip_self: bool) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for &i in a {
        for &j in b {
            if skip_self && i == j {
                continue;
            }
            total += vz.sim(i, j);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Lexical clean-up of a selection.
///
/// First, in every cluster with at least two members, sentences whose mean
/// tf-idf cosine to the other members is below `drop_threshold` are removed
/// (clusters left empty disappear). Then any two clusters whose mean
/// cross-cluster cosine exceeds `merge_threshold` are merged into the
/// better-ranked one, repeatedly until no pair qualifies.
pub fn postprocess_clusters(
    selection: &ClusterSelection,
    corpus: &Corpus,
    vectorizer: &Vectorizer,
    drop_threshold: f64,
    merge_threshold: f64,
) -> Result<ClusterSelection> {
    let resolve = |id: &SentenceId| {
        corpus.sentence_index(id.as_str()).ok_or_else(|| Error::UnknownId {
            kind: "sentence",
            id: id.to_string(),
        })
    };
    let mut clusters: Vec<(Cluster, Vec<usize>)> = Vec::with_capacity(selection.clusters.len());
    for c in &selection.clusters {
        let members = c.sentence_ids.iter().map(resolve).collect::<Result<Vec<_>>>()?;
        let kept: Vec<bool> = if members.len() < 2 {
            vec![true; members.len()]
        } else {
            members
                .iter()
                .map(|&m| mean_sim(vectorizer, &[m], &members, true) >= drop_threshold)
                .collect()
        };
        let mut c = c.clone();
        let mut idx = Vec::new();
        c.sentence_ids = Vec::new();
        for ((id, &m), keep) in selection.clusters[clusters.len()].sentence_ids.iter().zip(&members).zip(kept) {
            if keep {
                c.sentence_ids.push(id.clone());
                idx.push(m);
            }
        }
        clusters.push((c, idx));
    }
    clusters.retain(|(c, _)| !c.sentence_ids.is_empty());

    'merge: loop {
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                if mean_sim(vectorizer, &clusters[i].1, &clusters[j].1, false) > merge_threshold {
                    let (absorbed, absorbed_idx) = clusters.remove(j);
                    let (keep, keep_idx) = &mut clusters[i];
                    keep.merged_subpaths.push(absorbed.subpath);
                    keep.merged_subpaths.extend(absorbed.merged_subpaths);
                    for (id, m) in absorbed.sentence_ids.into_iter().zip(absorbed_idx) {
                        if !keep.sentence_ids.contains(&id) {
                            keep.sentence_ids.push(id);
                            keep_idx.push(m);
                        }
                    }
                    let mut pairs: Vec<(SentenceId, usize)> =
                        keep.sentence_ids.drain(..).zip(keep_idx.drain(..)).collect();
                    pairs.sort();
                    for (id, m) in pairs {
                        keep.sentence_ids.push(id);
                        keep_idx.push(m);
                    }
                    continue 'merge;
                }
            }
        }
        break;
    }

    Ok(ClusterSelection {
        clusters: clusters.into_iter().map(|(c, _)| c).collect(),
        ..selection.clone()
    })
}

/// Number of selected subpaths at each depth, over all selections.
pub fn depth_histogram(selections: &[ClusterSelection]) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for c in selections.iter().flat_map(|s| &s.clusters) {
        *hist.entry(c.subpath.depth()).or_insert(0) += 1;
    }
    hist
}

pub fn write_assignments(path: &Path, assignments: &[Assignment]) -> Result<()> {
    let mut out = String::new();
    for a in assignments {
        out.push_str(&serde_json::to_string(a)?);
        out.push('\n');
    }
    crate::io::write_atomic(path, out.as_bytes())
}

pub fn read_assignments(path: &Path) -> Result<Vec<Assignment>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn write_selections(path: &Path, selections: &[ClusterSelection]) -> Result<()> {
    crate::io::write_atomic(path, serde_json::to_string_pretty(selections)?.as_bytes())
}

pub fn read_selections(path: &Path) -> Result<Vec<ClusterSelection>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&raw)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ingest_jsonl;
    use proptest::prelude::*;

    fn corpus(lines: &[(&str, &str, &str)]) -> Corpus {
        let raw: Vec<String> = lines
            .iter()
            .map(|(e, r, t)| serde_json::json!({"entity_id": e, "review_id": r, "text": t}).to_string())
            .collect();
        ingest_jsonl(&raw.join("\n")).unwrap()
    }

    fn p(codes: &[u16]) -> CodePath {
        CodePath::new(codes.to_vec())
    }

    /// Entity a: 4 reviews, entity b: 2 reviews, entity c: 1 review.
    fn fixture() -> (Corpus, IndexedCorpus) {
        let c = corpus(&[
            ("a", "a1", "Pool is warm. Staff are kind."),
            ("a", "a2", "Pool is warm."),
            ("a", "a3", "Warm pool here. Bad coffee."),
            ("a", "a4", "Parking costs extra."),
            ("b", "b1", "Staff are kind."),
            ("b", "b2", "Pool is cold."),
            ("c", "c1", "Coffee is bad."),
        ]);
        let paths = vec![
            p(&[0, 0]), // a1 pool
            p(&[1, 0]), // a1 staff
            p(&[0, 0]), // a2 pool
            p(&[0, 1]), // a3 pool
            p(&[2, 0]), // a3 coffee
            p(&[1, 1]), // a4 parking
            p(&[1, 0]), // b1 staff
            p(&[0, 1]), // b2 pool
            p(&[2, 0]), // c1 coffee
        ];
        assert_eq!(c.sentences().len(), paths.len());
        let idx = IndexedCorpus::from_paths(&c, paths).unwrap();
        (c, idx)
    }

    #[test]
    fn counts_match_hand_tally() {
        let (_, idx) = fixture();
        assert_eq!(idx.review_count(&p(&[0]), 0), 3);
        assert_eq!(idx.review_count(&p(&[0, 0]), 0), 2);
        assert_eq!(idx.review_count(&p(&[1]), 0), 2);
        assert_eq!(idx.review_count(&p(&[2, 0]), 0), 1);
        assert_eq!(idx.review_count(&p(&[0]), 1), 1);
        assert_eq!(idx.global_review_count(&p(&[0])), 4);
        assert_eq!(idx.global_review_count(&p(&[1, 0])), 2);
        assert_eq!(idx.global_review_count(&p(&[2])), 2);
        assert_eq!(idx.sentence_count(&p(&[0]), None), 4);
        assert_eq!(idx.sentence_count(&p(&[0]), Some(0)), 3);
        assert!(idx.review_subpaths(0).contains(&p(&[1])));
        assert_eq!(idx.review_subpaths(0).len(), 4);
    }

    #[test]
    fn popularity_values() {
        let (_, idx) = fixture();
        assert_eq!(idx.term_popularity(&p(&[0]), 0), 0.75);
        assert_eq!(idx.term_popularity(&p(&[2, 2]), 0), 0.0);
        // tp([0]) = {0.75, 0.5, 0}; ibp = (6 + 3) / (6 + 1.25).
        let ibp = idx.inverse_baseline_popularity(&p(&[0]), 6.0).unwrap();
        assert!((ibp - 9.0 / 7.25).abs() < 1e-12);
        let s = idx.score_subpath(&p(&[0]), 0, 6.0).unwrap();
        assert_eq!(s.score, s.tp * s.ibp);
        // Absent everywhere: ibp = (α + |E|) / α.
        let absent = idx.inverse_baseline_popularity(&p(&[3]), 6.0).unwrap();
        assert!((absent - 9.0 / 6.0).abs() < 1e-12);
        assert!(matches!(idx.inverse_baseline_popularity(&p(&[3]), 0.0), Err(Error::ZeroBaseline)));
    }

    #[test]
    fn selection_matches_brute_force_ranking() {
        let (c, idx) = fixture();
        let alpha = 6.0;
        // Brute force: enumerate the entity's occupied subpaths from scratch.
        let mut occupied = BTreeSet::new();
        for s in c.entity_sentences(0) {
            for d in 1..=2 {
                occupied.insert(idx.path(s).prefix(d));
            }
        }
        let reviews_of = |e: usize| c.entity_reviews(e).to_vec();
        let tp = |sp: &CodePath, e: usize| {
            let rs = reviews_of(e);
            let hit = rs
                .iter()
                .filter(|&&r| c.review_sentences(r).iter().any(|&s| sp.is_prefix_of(idx.path(s))))
                .count();
            hit as f64 / rs.len() as f64
        };
        let mut expected: Vec<(f64, CodePath)> = occupied
            .into_iter()
            .map(|sp| {
                let mean = (alpha + (0..3).map(|e| tp(&sp, e)).sum::<f64>()) / (alpha + 3.0);
                (tp(&sp, 0) / mean, sp)
            })
            .collect();
        expected.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.depth().cmp(&b.1.depth())).then(a.1.cmp(&b.1)));

        let sel = idx.select_top_k(0, 100, alpha).unwrap();
        assert_eq!(sel.clusters.len(), expected.len());
        for (got, (score, sp)) in sel.clusters.iter().zip(&expected) {
            assert_eq!(&got.subpath, sp);
            assert!((got.score - score).abs() < 1e-12);
        }
        assert_eq!(sel.clusters[0].subpath, p(&[0]));
        assert_eq!(sel.clusters[0].sentence_ids, vec![SentenceId::from("a/a1/0"), "a/a2/0".into(), "a/a3/0".into()]);

        let top2 = idx.select_top_k(0, 2, alpha).unwrap();
        assert_eq!(top2.clusters[..], sel.clusters[..2]);
    }

    #[test]
    fn tie_prefers_shallow_then_small_codes() {
        let c = corpus(&[("a", "a1", "One."), ("b", "b1", "Two.")]);
        let idx = IndexedCorpus::from_paths(&c, vec![p(&[1, 0]), p(&[0, 1])]).unwrap();
        let sel = idx.select_top_k(0, 2, 6.0).unwrap();
        assert_eq!(sel.clusters[0].subpath, p(&[1]));
        assert_eq!(sel.clusters[1].subpath, p(&[1, 0]));
    }

    #[test]
    fn singleton_and_degenerate_tree() {
        let c = corpus(&[("a", "a1", "Only one.")]);
        let idx = IndexedCorpus::from_paths(&c, vec![p(&[2, 1, 0])]).unwrap();
        for d in 1..=3 {
            assert_eq!(idx.global_review_count(&idx.path(0).prefix(d)), 1);
            assert_eq!(idx.term_popularity(&idx.path(0).prefix(d), 0), 1.0);
        }
        let sel = idx.select_top_k(0, 8, 6.0).unwrap();
        let got: Vec<_> = sel.clusters.iter().map(|c| c.subpath.clone()).collect();
        assert_eq!(got, vec![p(&[2]), p(&[2, 1]), p(&[2, 1, 0])]);
        assert!(sel.clusters.iter().all(|c| (c.score - 1.0).abs() < 1e-12));
    }

    #[test]
    fn permutation_invariance() {
        let lines = [
            ("a", "a1", "Pool is warm. Staff are kind."),
            ("b", "b1", "Staff are kind."),
            ("a", "a2", "Pool is warm."),
            ("b", "b2", "Pool is cold."),
        ];
        let path_of = |text: &str| match text {
            "Pool is warm." => p(&[0, 0]),
            "Staff are kind." => p(&[1, 0]),
            _ => p(&[0, 1]),
        };
        let build = |order: &[usize]| {
            let c = corpus(&order.iter().map(|&i| lines[i]).collect::<Vec<_>>());
            let paths = c.sentences().iter().map(|s| path_of(&s.text)).collect();
            let idx = IndexedCorpus::from_paths(&c, paths).unwrap();
            let a = idx.entity("a").unwrap();
            idx.select_top_k(a, 4, 3.0).unwrap()
        };
        assert_eq!(build(&[0, 1, 2, 3]), build(&[3, 2, 1, 0]));
    }

    #[test]
    fn postprocess_drops_and_merges() {
        let c = corpus(&[
            ("a", "a1", "The pool was warm. The pool was warm today."),
            ("a", "a2", "Parking costs extra downtown."),
            ("a", "a3", "The pool was warm and clean."),
        ]);
        let vz = Vectorizer::build(&c).unwrap();
        let ids = |xs: &[&str]| xs.iter().map(|&x| SentenceId::from(x)).collect::<Vec<_>>();
        let sel = ClusterSelection {
            entity_id: "a".into(),
            k: 2,
            alpha: 6.0,
            clusters: vec![
                Cluster {
                    subpath: p(&[0]),
                    score: 2.0,
                    merged_subpaths: vec![],
                    sentence_ids: ids(&["a/a1/0", "a/a2/0", "a/a3/0"]),
                },
                Cluster {
                    subpath: p(&[1]),
                    score: 1.0,
                    merged_subpaths: vec![],
                    sentence_ids: ids(&["a/a1/1"]),
                },
            ],
        };
        // The parking sentence shares no term with the others: mean cosine 0.
        assert_eq!(vz.sim(2, 0), 0.0);
        assert_eq!(vz.sim(2, 3), 0.0);
        let out = postprocess_clusters(&sel, &c, &vz, 0.05, 0.5).unwrap();
        assert_eq!(out.clusters.len(), 1);
        assert_eq!(out.clusters[0].subpath, p(&[0]));
        assert_eq!(out.clusters[0].merged_subpaths, vec![p(&[1])]);
        assert_eq!(out.clusters[0].sentence_ids, ids(&["a/a1/0", "a/a1/1", "a/a3/0"]));

        let separate = postprocess_clusters(&sel, &c, &vz, 0.05, 1.0).unwrap();
        assert_eq!(separate.clusters.len(), 2);
        assert_eq!(separate.clusters[0].sentence_ids, ids(&["a/a1/0", "a/a3/0"]));
    }

    #[test]
    fn postprocess_identical_sentences_collapse() {
        let c = corpus(&[("a", "a1", "Great pool."), ("a", "a2", "Great pool."), ("a", "a3", "Great pool.")]);
        let vz = Vectorizer::build(&c).unwrap();
        let sel = ClusterSelection {
            entity_id: "a".into(),
            k: 3,
            alpha: 6.0,
            clusters: (0..3)
                .map(|i| Cluster {
                    subpath: p(&[i]),
                    score: 3.0 - i as f64,
                    merged_subpaths: vec![],
                    sentence_ids: vec![SentenceId::from(format!("a/a{}/0", i + 1))],
                })
                .collect(),
        };
        let out = postprocess_clusters(&sel, &c, &vz, 0.05, 0.5).unwrap();
        assert_eq!(out.clusters.len(), 1);
        assert_eq!(out.clusters[0].sentence_ids.len(), 3);
        assert_eq!(out.clusters[0].merged_subpaths, vec![p(&[1]), p(&[2])]);
    }

    #[test]
    fn histogram_and_io() {
        let (_, idx) = fixture();
        let sel = idx.select_top_k(0, 3, 6.0).unwrap();
        let mut manual = BTreeMap::new();
        for c in &sel.clusters {
            *manual.entry(c.subpath.depth()).or_insert(0) += 1;
        }
        assert_eq!(depth_histogram(std::slice::from_ref(&sel)), manual);
        assert!(depth_histogram(&[]).is_empty());

        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("selections.json");
        write_selections(&f, std::slice::from_ref(&sel)).unwrap();
        assert_eq!(read_selections(&f).unwrap(), vec![sel]);
    }

    #[test]
    fn assignments_round_trip() {
        let (c, idx) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("assignments.jsonl");
        write_assignments(&f, &idx.assignments(&c)).unwrap();
        let line = fs::read_to_string(&f).unwrap().lines().next().unwrap().to_string();
        assert_eq!(line, r#"{"sentence_id":"a/a1/0","entity_id":"a","review_id":"a1","path":[0,0]}"#);
        let back = IndexedCorpus::from_assignments(&c, &read_assignments(&f).unwrap()).unwrap();
        assert_eq!(back.paths(), idx.paths());
        assert!(IndexedCorpus::from_assignments(&c, &read_assignments(&f).unwrap()[1..]).is_err());
    }

    proptest! {
        #[test]
        fn prefix_monotonicity_and_bounds(codes in proptest::collection::vec((0u16..3, 0u16..3, 0u16..3), 9)) {
            let (c, _) = fixture();
            let paths: Vec<CodePath> = codes.iter().map(|&(a, b, d)| p(&[a, b, d])).collect();
            let idx = IndexedCorpus::from_paths(&c, paths.clone()).unwrap();
            for e in 0..3 {
                for path in &paths {
                    for d in 1..3 {
                        let short = idx.term_popularity(&path.prefix(d), e);
                        let long = idx.term_popularity(&path.prefix(d + 1), e);
                        prop_assert!(short >= long);
                        prop_assert!((0.0..=1.0).contains(&short));
                    }
                }
                let sel = idx.select_top_k(e, 5, 3.0).unwrap();
                for w in sel.clusters.windows(2) {
                    prop_assert!(w[0].score >= w[1].score);
                }
                for cl in &sel.clusters {
                    prop_assert!(cl.score >= 0.0);
                    for id in &cl.sentence_ids {
                        let s = c.sentence_index(id.as_str()).unwrap();
                        prop_assert!(cl.subpath.is_prefix_of(idx.path(s)));
                    }
                }
            }
        }
    }
}
