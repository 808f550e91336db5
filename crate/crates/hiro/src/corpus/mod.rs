//! Review corpora: ingestion, validation, persistence and lexical features.

mod text;
mod tfidf;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use text::{split_sentences, tokenize};
pub use tfidf::{tfidf_sim, SparseVector, Vectorizer};

use crate::error::{Error, Result};
use crate::ids::{EntityId, ReviewId, SentenceId};

pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: SentenceId,
    pub entity_id: EntityId,
    pub review_id: ReviewId,
    pub text: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub id: ReviewId,
    pub entity_id: EntityId,
    pub sentence_ids: Vec<SentenceId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub review_ids: Vec<ReviewId>,
}

/// Input format accepted by [`ingest`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    #[default]
    Jsonl,
}

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    version: u32,
    entities: Vec<Entity>,
    reviews: Vec<Review>,
    sentences: Vec<Sentence>,
}

/// Entities, reviews and sentences with index-based cross references.
///
/// Sentence order is ingestion order; index `i` in `sentences()` is used as
/// the canonical sentence handle everywhere else in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    entities: Vec<Entity>,
    reviews: Vec<Review>,
    sentences: Vec<Sentence>,
    sentence_review: Vec<usize>,
    sentence_entity: Vec<usize>,
    review_entity: Vec<usize>,
    review_sentences: Vec<Vec<usize>>,
    entity_reviews: Vec<Vec<usize>>,
    sentence_index: HashMap<SentenceId, usize>,
    entity_index: HashMap<EntityId, usize>,
}

impl Corpus {
    /// Build a corpus from its parts, checking every cross reference.
    pub fn new(entities: Vec<Entity>, reviews: Vec<Review>, sentences: Vec<Sentence>) -> Result<Self> {
        let bad = |m: String| Error::format("corpus", m);

        let mut sentence_index = HashMap::with_capacity(sentences.len());
        for (i, s) in sentences.iter().enumerate() {
            if s.text.trim().is_empty() {
                return Err(bad(format!("sentence {} has empty text", s.id)));
            }
            if tokenize(&s.text) != s.tokens {
                return Err(bad(format!("sentence {} tokens do not match its text", s.id)));
            }
            if sentence_index.insert(s.id.clone(), i).is_some() {
                return Err(bad(format!("duplicate sentence id {}", s.id)));
            }
        }
        let mut review_index = HashMap::with_capacity(reviews.len());
        for (i, r) in reviews.iter().enumerate() {
            if review_index.insert(r.id.clone(), i).is_some() {
                return Err(bad(format!("duplicate review id {}", r.id)));
            }
        }
        let mut entity_index = HashMap::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            if entity_index.insert(e.id.clone(), i).is_some() {
                return Err(bad(format!("duplicate entity id {}", e.id)));
            }
        }

        let mut entity_reviews = vec![Vec::new(); entities.len()];
        let mut review_entity = vec![0; reviews.len()];
        for (ei, e) in entities.iter().enumerate() {
            if e.review_ids.is_empty() {
                return Err(bad(format!("entity {} has no reviews", e.id)));
            }
            for rid in &e.review_ids {
                let ri = *review_index.get(rid).ok_or_else(|| Error::UnknownId {
                    kind: "review",
                    id: rid.to_string(),
                })?;
                if reviews[ri].entity_id != e.id {
                    return Err(bad(format!("review {rid} listed under entity {} but belongs to {}", e.id, reviews[ri].entity_id)));
                }
                entity_reviews[ei].push(ri);
                review_entity[ri] = ei;
            }
        }

        let mut sentence_review = vec![usize::MAX; sentences.len()];
        let mut review_sentences = vec![Vec::new(); reviews.len()];
        for (ri, r) in reviews.iter().enumerate() {
            if !entity_index.contains_key(&r.entity_id) {
                return Err(Error::UnknownId {
                    kind: "entity",
                    id: r.entity_id.to_string(),
                });
            }
            if r.sentence_ids.is_empty() {
                return Err(bad(format!("review {} has no sentences", r.id)));
            }
            for sid in &r.sentence_ids {
                let si = *sentence_index.get(sid).ok_or_else(|| Error::UnknownId {
                    kind: "sentence",
                    id: sid.to_string(),
                })?;
                let s = &sentences[si];
                if s.entity_id != r.entity_id || s.review_id != r.id {
                    return Err(bad(format!("sentence {sid} does not belong to review {}", r.id)));
                }
                sentence_review[si] = ri;
                review_sentences[ri].push(si);
            }
        }
        if let Some(orphan) = sentence_review.iter().position(|&r| r == usize::MAX) {
            return Err(bad(format!("sentence {} is not referenced by any review", sentences[orphan].id)));
        }
        let sentence_entity = sentence_review.iter().map(|&r| review_entity[r]).collect();

        Ok(Self {
            entities,
            reviews,
            sentences,
            sentence_review,
            sentence_entity,
            review_entity,
            review_sentences,
            entity_reviews,
            sentence_index,
            entity_index,
        })
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn reviews(&self) -> &[Review] {
        &self.reviews
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentence_index(&self, id: &str) -> Option<usize> {
        self.sentence_index.get(id).copied()
    }

    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.entity_index.get(id).copied()
    }

    /// Review index of sentence `s`.
    pub fn review_of(&self, s: usize) -> usize {
        self.sentence_review[s]
    }

    /// Entity index of sentence `s`.
    pub fn entity_of(&self, s: usize) -> usize {
        self.sentence_entity[s]
    }

    pub fn entity_of_review(&self, r: usize) -> usize {
        self.review_entity[r]
    }

    pub fn review_sentences(&self, r: usize) -> &[usize] {
        &self.review_sentences[r]
    }

    pub fn entity_reviews(&self, e: usize) -> &[usize] {
        &self.entity_reviews[e]
    }

    /// Sentence indices of entity `e`, in corpus order.
    pub fn entity_sentences(&self, e: usize) -> Vec<usize> {
        self.entity_reviews[e]
            .iter()
            .flat_map(|&r| self.review_sentences[r].iter().copied())
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CorpusFile {
            version: CORPUS_VERSION,
            entities: self.entities.clone(),
            reviews: self.reviews.clone(),
            sentences: self.sentences.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: CorpusFile = serde_json::from_str(json)?;
        if file.version != CORPUS_VERSION {
            return Err(Error::Version {
                what: "corpus",
                found: file.version,
                expected: CORPUS_VERSION,
            });
        }
        Self::new(file.entities, file.reviews, file.sentences)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}

#[derive(Deserialize)]
struct ReviewLine {
    entity_id: String,
    review_id: String,
    text: String,
    #[serde(default)]
    entity_name: Option<String>,
}

/// Read a review file and split every review into sentences.
pub fn ingest(path: &Path, format: InputFormat) -> Result<Corpus> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        InputFormat::Jsonl => ingest_jsonl(&raw).map_err(|e| match e {
            Error::EmptyInput(_) => Error::EmptyInput(path.to_path_buf()),
            other => other,
        }),
    }
}

/// Parse JSONL review lines (1-based line numbers in errors).
pub fn ingest_jsonl(raw: &str) -> Result<Corpus> {
    let mut entity_order: Vec<EntityId> = Vec::new();
    let mut entities: BTreeMap<EntityId, Entity> = BTreeMap::new();
    let mut reviews = Vec::new();
    let mut sentences = Vec::new();
    let mut seen_reviews = HashMap::new();

    for (n, line) in raw.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReviewLine = serde_json::from_str(line).map_err(|e| Error::Ingest {
            line: line_no,
            message: e.to_string(),
        })?;
        let entity_id = EntityId(rec.entity_id);
        let review_id = ReviewId(rec.review_id);
        if let Some(prev) = seen_reviews.insert(review_id.clone(), line_no) {
            return Err(Error::Ingest {
                line: line_no,
                message: format!("review id {review_id} already used on line {prev}"),
            });
        }

        let sentence_ids: Vec<SentenceId> = split_sentences(&rec.text)
            .into_iter()
            .enumerate()
            .map(|(ordinal, text)| {
                let id = SentenceId(format!("{entity_id}/{review_id}/{ordinal}"));
                sentences.push(Sentence {
                    id: id.clone(),
                    entity_id: entity_id.clone(),
                    review_id: review_id.clone(),
                    tokens: tokenize(&text),
                    text,
                });
                id
            })
            .collect();
        if sentence_ids.is_empty() {
            tracing::warn!(line = line_no, review = %review_id, "review has no sentences, skipped");
            continue;
        }

        let entity = entities.entry(entity_id.clone()).or_insert_with(|| {
            entity_order.push(entity_id.clone());
            Entity {
                id: entity_id.clone(),
                name: entity_id.to_string(),
                review_ids: Vec::new(),
            }
        });
        if let Some(name) = rec.entity_name {
            entity.name = name;
        }
        entity.review_ids.push(review_id.clone());
        reviews.push(Review {
            id: review_id,
            entity_id,
            sentence_ids,
        });
    }

    if reviews.is_empty() {
        return Err(Error::EmptyInput(Default::default()));
    }
    let entities = entity_order
        .into_iter()
        .map(|id| entities.remove(&id).expect("entity recorded"))
        .collect();
    Corpus::new(entities, reviews, sentences)
}
