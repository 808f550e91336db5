//! Sentence-level tf-idf with smoothed idf and cosine similarity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};

/// Sparse weight vector over a [`Vectorizer`] vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SparseVector {
    /// `(term index, weight)` sorted by term index, weights strictly positive.
    entries: Vec<(u32, f64)>,
    l2_norm: f64,
}

impl SparseVector {
    /// Build from arbitrary `(index, weight)` pairs; duplicate indices are
    /// summed and non-positive weights rejected.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut map: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, w) in pairs {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::format("sparse vector", format!("weight {w} at index {i}")));
            }
            *map.entry(i).or_default() += w;
        }
        let entries: Vec<_> = map.into_iter().collect();
        let l2_norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        Ok(Self { entries, l2_norm })
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// Cosine similarity in `[0, 1]`; zero vectors have similarity 0 to everything.
pub fn tfidf_sim(a: &SparseVector, b: &SparseVector) -> f64 {
    if a.l2_norm == 0.0 || b.l2_norm == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (a.l2_norm * b.l2_norm)).clamp(0.0, 1.0)
}

/// Immutable tf-idf model fitted on the sentences of a corpus.
///
/// `idf(t) = ln((1 + S) / (1 + df(t))) + 1`, with `S` the number of sentences
/// and `df` the number of sentences containing `t`. Sentence vectors hold
/// `tf * idf` and are l2-normalised.
#[derive(Debug, Clone)]
pub struct Vectorizer {
    vocab: BTreeMap<String, u32>,
    idf: Vec<f64>,
    vectors: Vec<SparseVector>,
    /// term -> (sentence, weight) for every sentence containing the term.
    postings: Vec<Vec<(u32, f64)>>,
}

impl Vectorizer {
    pub fn build(corpus: &Corpus) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Precondition("cannot fit tf-idf on an empty corpus".into()));
        }
        let docs: Vec<&[String]> = corpus.sentences().iter().map(|s| s.tokens.as_slice()).collect();
        Ok(Self::fit(&docs))
    }

    /// Fit on pre-tokenized documents. Panics on an empty slice.
    pub fn fit<S: AsRef<str>>(docs: &[&[S]]) -> Self {
        assert!(!docs.is_empty(), "tf-idf needs at least one document");
        let mut vocab = BTreeMap::new();
        for doc in docs {
            for t in doc.iter() {
                if !vocab.contains_key(t.as_ref()) {
                    vocab.insert(t.as_ref().to_string(), 0);
                }
            }
        }
        for (i, v) in vocab.values_mut().enumerate() {
            *v = i as u32;
        }
        let mut df = vec![0usize; vocab.len()];
        for doc in docs {
            let mut ids: Vec<u32> = doc.iter().map(|t| vocab[t.as_ref()]).collect();
            ids.sort_unstable();
            ids.dedup();
            for i in ids {
                df[i as usize] += 1;
            }
        }
        let s = docs.len() as f64;
        let idf = df
            .iter()
            .map(|&d| ((1.0 + s) / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        let mut vz = Self {
            vocab,
            idf,
            vectors: Vec::new(),
            postings: Vec::new(),
        };
        vz.vectors = docs.iter().map(|d| vz.transform(d)).collect();
        let mut postings = vec![Vec::new(); vz.vocab.len()];
        for (si, v) in vz.vectors.iter().enumerate() {
            for &(t, w) in &v.entries {
                postings[t as usize].push((si as u32, w));
            }
        }
        vz.postings = postings;
        vz
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.vocab.get(term).map(|&i| self.idf[i as usize])
    }

    /// Normalised tf-idf vector of an arbitrary token sequence.
    /// Out-of-vocabulary tokens are ignored.
    pub fn transform<S: AsRef<str>>(&self, tokens: &[S]) -> SparseVector {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for t in tokens {
            if let Some(&i) = self.vocab.get(t.as_ref()) {
                *tf.entry(i).or_default() += 1.0;
            }
        }
        let mut entries: Vec<(u32, f64)> = tf
            .into_iter()
            .map(|(i, c)| (i, c * self.idf[i as usize]))
            .collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for e in &mut entries {
                e.1 /= norm;
            }
        }
        let l2_norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        SparseVector { entries, l2_norm }
    }

    /// Vector of fitted sentence `i`.
    pub fn vector(&self, i: usize) -> &SparseVector {
        &self.vectors[i]
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn sim(&self, i: usize, j: usize) -> f64 {
        tfidf_sim(&self.vectors[i], &self.vectors[j])
    }

    /// Cosine similarity of `query` to every fitted sentence sharing at
    /// least one term with it, as `(sentence, similarity)` in sentence order.
    pub fn similar_to(&self, query: &SparseVector) -> Vec<(usize, f64)> {
        if query.is_zero() {
            return Vec::new();
        }
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for &(t, qw) in &query.entries {
            for &(s, w) in &self.postings[t as usize] {
                *acc.entry(s).or_default() += qw * w;
            }
        }
        acc.into_iter()
            .map(|(s, dot)| {
                let other = &self.vectors[s as usize];
                let sim = (dot / (query.l2_norm * other.l2_norm)).clamp(0.0, 1.0);
                (s as usize, sim)
            })
            .collect()
    }
}
