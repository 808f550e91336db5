//! Mini-batch Adam training of the codebooks and projection.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{contrastive_loss, Gradients, PairBatch};
use super::{QuantizerConfig, QuantizerModel};
use crate::corpus::{Corpus, Vectorizer};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::pairing::{negative_mask, PositivePair};

/// Annealed Gumbel temperature: `max(tau_min, tau0 * exp(-step / gamma_temp))`.
pub fn temperature(step: usize, config: &QuantizerConfig) -> f64 {
    (config.tau0 * (-(step as f64) / config.gamma_temp).exp()).max(config.tau_min)
}

/// Positive pair expressed as indices into an embedding matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainPair {
    pub query: usize,
    pub target: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStep {
    pub step: usize,
    pub tau: f64,
    pub loss: f64,
    pub infonce: f64,
    pub entropy: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<TrainStep>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, model: &mut QuantizerModel, grad: &Gradients, lr: f64, train_projection: bool) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        let g = grad.flatten();
        let n_codebook = model.depth * model.codes * model.dim;
        let params = model
            .codebooks
            .iter_mut()
            .flatten()
            .flatten()
            .chain(model.projection.iter_mut().flatten());
        for (i, p) in params.enumerate() {
            if i >= n_codebook && !train_projection {
                break;
            }
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            *p -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Train `model` in place on `pairs` over the rows of `embeddings`.
///
/// `negatives` receives the item rows of a batch (queries then positives)
/// and returns the `2B x 2B` mask of admissible negatives. The run is fully
/// determined by the model, the data and `rng`.
pub fn train<R, F>(
    model: &mut QuantizerModel,
    pairs: &[TrainPair],
    embeddings: &[Vec<f64>],
    negatives: F,
    rng: &mut R,
) -> Result<TrainLog>
where
    R: Rng + ?Sized,
    F: Fn(&[usize]) -> Vec<Vec<bool>>,
{
    let cfg = model.config.clone();
    cfg.validate()?;
    let mut log = TrainLog::default();
    if cfg.steps == 0 {
        return Ok(log);
    }
    if pairs.is_empty() {
        return Err(Error::Precondition("training needs at least one positive pair".into()));
    }
    if let Some(e) = embeddings.iter().find(|e| e.len() != model.dim) {
        return Err(Error::Config(format!("embedding of dimension {} for a model of dimension {}", e.len(), model.dim)));
    }

    let n_params = model.depth * model.codes * model.dim + model.dim * model.dim;
    let mut adam = Adam::new(n_params);
    let batch_size = cfg.batch_size.min(pairs.len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();

    for step in 0..cfg.steps {
        let mut chosen = Vec::with_capacity(batch_size);
        while chosen.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            chosen.push(pairs[order[cursor]]);
            cursor += 1;
        }
        let rows: Vec<usize> = chosen
            .iter()
            .map(|p| p.query)
            .chain(chosen.iter().map(|p| p.target))
            .collect();
        let batch = PairBatch {
            queries: chosen.iter().map(|p| embeddings[p.query].as_slice()).collect(),
            positives: chosen.iter().map(|p| embeddings[p.target].as_slice()).collect(),
            rho: chosen.iter().map(|p| p.rho).collect(),
            mask: negatives(&rows),
        };
        let tau = temperature(step, &cfg);
        let (loss, grad, _) = contrastive_loss(model, &batch, tau, rng);
        adam.step(model, &grad, cfg.lr, cfg.train_projection);
        log.steps.push(TrainStep {
            step,
            tau,
            loss: loss.total,
            infonce: loss.infonce,
            entropy: loss.entropy,
            norm: loss.norm,
        });
        if step % 100 == 0 {
            tracing::debug!(step, tau, loss = loss.total, "training step");
        }
    }
    Ok(log)
}

/// Resolve mined pairs against a corpus and its embeddings, then train with
/// tf-idf based in-batch negatives.
pub fn train_on_corpus<R: Rng + ?Sized>(
    model: &mut QuantizerModel,
    pairs: &[PositivePair],
    corpus: &Corpus,
    embeddings: &EmbeddingTable,
    vectorizer: &Vectorizer,
    neg_threshold: f64,
    rng: &mut R,
) -> Result<TrainLog> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut sentence_of_row: Vec<usize> = Vec::new();
    let mut row_of_sentence = std::collections::HashMap::new();
    let mut resolve = |id: &crate::ids::SentenceId| -> Result<usize> {
        let s = corpus.sentence_index(id.as_str()).ok_or_else(|| Error::UnknownId {
            kind: "sentence",
            id: id.to_string(),
        })?;
        if let Some(&r) = row_of_sentence.get(&s) {
            return Ok(r);
        }
        let e = embeddings
            .get(id.as_str())
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))?;
        rows.push(e.iter().map(|&x| x as f64).collect());
        sentence_of_row.push(s);
        row_of_sentence.insert(s, rows.len() - 1);
        Ok(rows.len() - 1)
    };
    let train_pairs = pairs
        .iter()
        .map(|p| {
            Ok(TrainPair {
                query: resolve(&p.query_id)?,
                target: resolve(&p.target_id)?,
                rho: p.rho,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let negatives = |batch_rows: &[usize]| {
        let sentences: Vec<usize> = batch_rows.iter().map(|&r| sentence_of_row[r]).collect();
        negative_mask(&sentences, vectorizer, neg_threshold)
    };
    train(model, &train_pairs, &rows, negatives, rng)
}
