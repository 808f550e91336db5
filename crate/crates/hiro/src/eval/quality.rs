//! Purity and colocation of sentence clusters.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Vectorizer};
use crate::error::{Error, Result};
use crate::nli::EntailmentClient;
use crate::quantizer::CodePath;

/// Pair budget above which pairs are sampled instead of enumerated.
pub const MAX_EXHAUSTIVE_PAIRS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    #[default]
    Tfidf,
    Nli,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterQuality {
    pub purity: f64,
    pub colocation: f64,
    /// `purity - colocation`.
    pub quality: f64,
}

/// Pairwise similarity between sentences given by corpus index.
pub trait PairSimilarity: Sync {
    fn similarity(&self, a: usize, b: usize) -> Result<f64>;
}

impl PairSimilarity for Vectorizer {
    fn similarity(&self, a: usize, b: usize) -> Result<f64> {
        Ok(self.sim(a, b))
    }
}

/// Mean of the two directional entailment probabilities.
pub struct NliSimilarity<'a> {
    pub corpus: &'a Corpus,
    pub nli: &'a dyn EntailmentClient,
}

impl PairSimilarity for NliSimilarity<'_> {
    fn similarity(&self, a: usize, b: usize) -> Result<f64> {
        let (x, y) = (&self.corpus.sentences()[a].text, &self.corpus.sentences()[b].text);
        Ok((self.nli.p_entail(x, y)? + self.nli.p_entail(y, x)?) / 2.0)
    }
}

impl<F: Fn(usize, usize) -> f64 + Sync> PairSimilarity for F {
    fn similarity(&self, a: usize, b: usize) -> Result<f64> {
        Ok(self(a, b))
    }
}

/// Sentences grouped by their depth-`depth` prefix, in prefix order.
pub fn clusters_at_depth(paths: &[CodePath], depth: usize) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<CodePath, Vec<usize>> = BTreeMap::new();
    for (i, p) in paths.iter().enumerate() {
        groups.entry(p.prefix(depth.min(p.depth()))).or_default().push(i);
    }
    groups.into_values().collect()
}

fn within_pairs(clusters: &[Vec<usize>]) -> usize {
    clusters.iter().map(|c| c.len() * c.len().saturating_sub(1) / 2).sum()
}

fn cross_pairs(clusters: &[Vec<usize>]) -> usize {
    let total: usize = clusters.iter().map(Vec::len).sum();
    let same: usize = clusters.iter().map(|c| c.len() * c.len()).sum();
    (total * total - same) / 2
}

/// Purity (mean within-cluster similarity, singletons excluded) and
/// colocation (mean similarity of pairs from different clusters; a
/// sentence listed in two clusters is never paired with itself).
///
/// Each mean is exact when it ranges over at most `max_pairs` pairs and is
/// otherwise estimated from `max_pairs` uniformly sampled pairs.
pub fn cluster_quality<R: Rng + ?Sized>(
    clusters: &[Vec<usize>],
    sim: &dyn PairSimilarity,
    max_pairs: usize,
    rng: &mut R,
) -> Result<ClusterQuality> {
    let clusters: Vec<Vec<usize>> = clusters.iter().filter(|c| !c.is_empty()).cloned().collect();
    if clusters.len() < 2 {
        return Err(Error::Precondition("colocation needs at least two clusters".into()));
    }
    let n_within = within_pairs(&clusters);
    if n_within == 0 {
        return Err(Error::Precondition("purity is undefined when every cluster is a singleton".into()));
    }
    let purity = if n_within <= max_pairs {
        let mut total = 0.0;
        for c in &clusters {
            for i in 0..c.len() {
                for j in (i + 1)..c.len() {
                    total += sim.similarity(c[i], c[j])?;
                }
            }
        }
        total / n_within as f64
    } else {
        // Pick a cluster proportionally to its pair count, then a pair in it.
        let weights: Vec<usize> = clusters.iter().map(|c| c.len() * c.len().saturating_sub(1) / 2).collect();
        let mut total = 0.0;
        for _ in 0..max_pairs {
            let mut t = rng.random_range(0..n_within);
            let mut ci = 0;
            while t >= weights[ci] {
                t -= weights[ci];
                ci += 1;
            }
            let c = &clusters[ci];
            let i = rng.random_range(0..c.len());
            let mut j = rng.random_range(0..c.len() - 1);
            if j >= i {
                j += 1;
            }
            total += sim.similarity(c[i], c[j])?;
        }
        total / max_pairs as f64
    };

    let n_cross = cross_pairs(&clusters);
    let colocation = if n_cross <= max_pairs {
        let mut total = 0.0;
        let mut n = 0usize;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                for &x in &clusters[a] {
                    for &y in &clusters[b] {
                        if x != y {
                            total += sim.similarity(x, y)?;
                            n += 1;
                        }
                    }
                }
            }
        }
        if n == 0 {
            return Err(Error::Precondition("no cross-cluster pairs of distinct sentences".into()));
        }
        total / n as f64
    } else {
        // Uniform over ordered cross-cluster slot pairs by rejection.
        let slots: Vec<(usize, usize)> = clusters
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| c.iter().map(move |&s| (ci, s)))
            .collect();
        let mut total = 0.0;
        let mut n = 0usize;
        while n < max_pairs {
            let (ca, x) = slots[rng.random_range(0..slots.len())];
            let (cb, y) = slots[rng.random_range(0..slots.len())];
            if ca == cb || x == y {
                continue;
            }
            total += sim.similarity(x, y)?;
            n += 1;
        }
        total / n as f64
    };

    Ok(ClusterQuality {
        purity,
        colocation,
        quality: purity - colocation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ingest_jsonl;
    use crate::rng::substream;

    fn corpus(texts: &[&str]) -> Corpus {
        let raw: Vec<String> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| serde_json::json!({"entity_id": "e", "review_id": format!("r{i}"), "text": t}).to_string())
            .collect();
        ingest_jsonl(&raw.join("\n")).unwrap()
    }

    #[test]
    fn orthogonal_blocks() {
        let c = corpus(&["Great pool.", "Great pool.", "Rude staff.", "Rude staff."]);
        let vz = Vectorizer::build(&c).unwrap();
        let q = cluster_quality(&[vec![0, 1], vec![2, 3]], &vz, MAX_EXHAUSTIVE_PAIRS, &mut substream(0, "q")).unwrap();
        assert!((q.purity - 1.0).abs() < 1e-12);
        assert_eq!(q.colocation, 0.0);
        assert_eq!(q.quality, q.purity - q.colocation);
    }

    #[test]
    fn duplicated_cluster_has_colocation_equal_purity() {
        let c = corpus(&["Great pool here.", "The pool is great.", "Warm pool."]);
        let vz = Vectorizer::build(&c).unwrap();
        let q = cluster_quality(&[vec![0, 1, 2], vec![0, 1, 2]], &vz, MAX_EXHAUSTIVE_PAIRS, &mut substream(0, "q")).unwrap();
        assert!((q.purity - q.colocation).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_three_clusters() {
        let table = [
            [1.0, 0.8, 0.1, 0.0, 0.2],
            [0.8, 1.0, 0.3, 0.1, 0.0],
            [0.1, 0.3, 1.0, 0.6, 0.4],
            [0.0, 0.1, 0.6, 1.0, 0.5],
            [0.2, 0.0, 0.4, 0.5, 1.0],
        ];
        let sim = |a: usize, b: usize| table[a][b];
        let clusters = vec![vec![0, 1], vec![2, 3], vec![4]];
        let q = cluster_quality(&clusters, &sim, MAX_EXHAUSTIVE_PAIRS, &mut substream(0, "q")).unwrap();
        // Within: (0,1)=.8, (2,3)=.6. Cross: 8 pairs summing to 1.6.
        assert!((q.purity - 0.7).abs() < 1e-12);
        assert!((q.colocation - 0.2).abs() < 1e-12);
    }

    #[test]
    fn sampled_estimate_within_three_standard_errors() {
        let mut rng = substream(4, "sims");
        let n = 60;
        let table: Vec<Vec<f64>> = {
            let mut t = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i..n {
                    let v = if i == j { 1.0 } else { rng.random::<f64>() * if i / 20 == j / 20 { 1.0 } else { 0.4 } };
                    t[i][j] = v;
                    t[j][i] = v;
                }
            }
            t
        };
        let sim = |a: usize, b: usize| table[a][b];
        let clusters: Vec<Vec<usize>> = (0..3).map(|c| (c * 20..c * 20 + 20).collect()).collect();
        let exact = cluster_quality(&clusters, &sim, MAX_EXHAUSTIVE_PAIRS, &mut substream(0, "q")).unwrap();
        let budget = 400;
        let sampled = cluster_quality(&clusters, &sim, budget, &mut substream(5, "q")).unwrap();
        // Similarities lie in [0, 1]; their standard deviation is at most 0.5.
        let se = 0.5 / (budget as f64).sqrt();
        assert!((exact.purity - sampled.purity).abs() < 3.0 * se);
        assert!((exact.colocation - sampled.colocation).abs() < 3.0 * se);
    }

    #[test]
    fn errors_and_grouping() {
        let sim = |_: usize, _: usize| 0.0;
        let mut rng = substream(0, "q");
        assert!(cluster_quality(&[vec![0], vec![1]], &sim, 10, &mut rng).is_err());
        assert!(cluster_quality(&[vec![0, 1]], &sim, 10, &mut rng).is_err());
        let paths = vec![
            CodePath::new(vec![1, 0]),
            CodePath::new(vec![0, 1]),
            CodePath::new(vec![1, 1]),
            CodePath::new(vec![0, 1]),
        ];
        assert_eq!(clusters_at_depth(&paths, 1), vec![vec![1, 3], vec![0, 2]]);
        assert_eq!(clusters_at_depth(&paths, 2), vec![vec![1, 3], vec![0], vec![2]]);
    }
}
