//! Positive-pair mining for contrastive training.
//!
//! Candidates come from tf-idf similarity inside a similarity band and are
//! kept only when the entailment oracle says the query entails them. In-batch
//! negatives are restricted to lexically dissimilar items.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vectorizer};
use crate::error::{Error, Result};
use crate::ids::SentenceId;
use crate::nli::{EntailmentClient, EntailmentVerdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivePair {
    pub query_id: SentenceId,
    pub target_id: SentenceId,
    /// tf-idf similarity of the pair, used as a confidence weight.
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingConfig {
    /// Minimum tf-idf similarity for a candidate target.
    pub cand_threshold: f64,
    /// Candidates above this similarity are near-duplicates and skipped.
    pub max_sim: f64,
    pub k_candidates: usize,
    /// In-batch items at or above this similarity are not used as negatives.
    pub neg_threshold: f64,
    /// Maximum number of pairs to emit.
    pub pair_budget: usize,
    pub entail_threshold: f64,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            cand_threshold: 0.4,
            max_sim: 0.95,
            k_candidates: 20,
            neg_threshold: 0.3,
            pair_budget: 100_000,
            entail_threshold: 0.5,
        }
    }
}

/// Similarity band and count limit used when looking up candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateBand {
    pub k: usize,
    pub min_sim: f64,
    pub max_sim: f64,
}

impl From<&PairingConfig> for CandidateBand {
    fn from(c: &PairingConfig) -> Self {
        Self {
            k: c.k_candidates,
            min_sim: c.cand_threshold,
            max_sim: c.max_sim,
        }
    }
}

/// Up to `band.k` sentences from other reviews whose similarity to `query`
/// lies in `[min_sim, max_sim]`, most similar first (ties by sentence index).
pub fn mine_candidates(query: usize, corpus: &Corpus, vectorizer: &Vectorizer, band: CandidateBand) -> Vec<(usize, f64)> {
    let own_review = corpus.review_of(query);
    let mut found: Vec<(usize, f64)> = vectorizer
        .similar_to(vectorizer.vector(query))
        .into_iter()
        .filter(|&(s, sim)| {
            s != query && corpus.review_of(s) != own_review && sim >= band.min_sim && sim <= band.max_sim
        })
        .collect();
    found.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    found.truncate(band.k);
    found
}

/// Keep the candidates the query entails, with `rho` set to their tf-idf
/// similarity. Client failures abort with an error naming the pair.
pub fn filter_entailed(
    query: usize,
    candidates: &[(usize, f64)],
    corpus: &Corpus,
    nli: &dyn EntailmentClient,
    entail_threshold: f64,
) -> Result<Vec<PositivePair>> {
    let q = &corpus.sentences()[query];
    let mut out = Vec::new();
    for &(c, rho) in candidates {
        let t = &corpus.sentences()[c];
        let p = nli.p_entail(&q.text, &t.text).map_err(|e| Error::Entailment {
            premise: q.id.to_string(),
            hypothesis: t.id.to_string(),
            attempts: match &e {
                Error::Transport { attempts, .. } => *attempts,
                _ => 1,
            },
            message: e.to_string(),
        })?;
        let verdict = EntailmentVerdict::new(q.id.to_string(), t.id.to_string(), p, entail_threshold);
        if verdict.is_entailed() {
            out.push(PositivePair {
                query_id: q.id.clone(),
                target_id: t.id.clone(),
                rho,
            });
        }
    }
    Ok(out)
}

/// `mask[i][j]` is true iff `i != j` and items `i`, `j` are lexically
/// dissimilar enough (similarity below `threshold`) to act as negatives.
pub fn negative_mask(batch: &[usize], vectorizer: &Vectorizer, threshold: f64) -> Vec<Vec<bool>> {
    let n = batch.len();
    let mut mask = vec![vec![false; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let neg = vectorizer.sim(batch[i], batch[j]) < threshold;
            mask[i][j] = neg;
            mask[j][i] = neg;
        }
    }
    mask
}

/// Mine pairs from queries drawn uniformly without replacement until the
/// pair budget is met. Output is sorted by query id then target id.
pub fn mine_pairs<R: Rng>(
    corpus: &Corpus,
    vectorizer: &Vectorizer,
    nli: &dyn EntailmentClient,
    config: &PairingConfig,
    rng: &mut R,
) -> Result<Vec<PositivePair>> {
    let mut order: Vec<usize> = (0..corpus.sentences().len()).collect();
    order.shuffle(rng);
    let band = CandidateBand::from(config);

    let mut pairs = Vec::new();
    for chunk in order.chunks(64) {
        if pairs.len() >= config.pair_budget {
            break;
        }
        let mined: Vec<Vec<PositivePair>> = chunk
            .par_iter()
            .map(|&q| {
                let cands = mine_candidates(q, corpus, vectorizer, band);
                filter_entailed(q, &cands, corpus, nli, config.entail_threshold)
            })
            .collect::<Result<_>>()?;
        for found in mined {
            pairs.extend(found);
        }
    }
    pairs.truncate(config.pair_budget);
    pairs.sort_by(|a, b| a.query_id.cmp(&b.query_id).then_with(|| a.target_id.cmp(&b.target_id)));
    Ok(pairs)
}

pub fn write_pairs(path: &Path, pairs: &[PositivePair]) -> Result<()> {
    let mut buf = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut buf, p)?;
        buf.write_all(b"\n").expect("write to vec");
    }
    crate::io::write_atomic(path, &buf)
}

pub fn read_pairs(path: &Path) -> Result<Vec<PositivePair>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Ingest {
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
