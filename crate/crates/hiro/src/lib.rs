//! Hierarchical indexing of opinion sentences for attributable summaries.
//!
//! Sentences from entity reviews are encoded as discrete paths through a
//! learned residual quantizer. Subpaths that are popular within one entity
//! but rare across the collection become the evidence clusters from which
//! summaries are written.

pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod generation;
pub mod http;
pub mod ids;
pub mod io;
pub mod nli;
pub mod pipeline;
pub mod pairing;
pub mod quantizer;
pub mod retriever;
pub mod rng;

pub use corpus::{split_sentences, tokenize, Corpus};
pub use error::{Error, Result};
pub use ids::{EntityId, ReviewId, SentenceId};
pub use quantizer::{CodePath, QuantizerConfig, QuantizerModel};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/corpus.md")]
    pub struct CorpusChapter;
    #[doc = include_str!("../../../book/src/pairing.md")]
    pub struct Pairing;
    #[doc = include_str!("../../../book/src/quantizer.md")]
    pub struct Quantizer;
    #[doc = include_str!("../../../book/src/retrieval.md")]
    pub struct Retrieval;
    #[doc = include_str!("../../../book/src/generation.md")]
    pub struct Generation;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub struct Evaluation;
    #[doc = include_str!("../../../book/src/pipeline.md")]
    pub struct Pipeline;
}
