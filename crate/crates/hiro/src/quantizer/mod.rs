//! Hierarchical residual quantizer.
//!
//! A dense embedding `e` is first mapped through a square linear projection,
//! `z = P e`, and then decomposed level by level: at level `d` every code `q`
//! is scored by the negative squared distance between codebook row
//! `C_d(q)` and the residual left after subtracting the rows chosen at all
//! shallower levels. Inference takes the greedy argmax; training samples
//! with the Gumbel-max trick and backpropagates through the softmax
//! (straight-through).

mod kmeans;
mod loss;
mod path;
mod train;

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans, RecursiveKMeans};
pub use loss::{
    contrastive_loss, draw_sample, loss_and_grad, loss_value, FrozenSample, Gradients, LossBreakdown, PairBatch,
};
pub use path::CodePath;
pub use train::{temperature, train, train_on_corpus, TrainLog, TrainPair, TrainStep};

use crate::error::{Error, Result};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerConfig {
    /// Codebook size `K`.
    pub codes: usize,
    /// Number of levels `D`.
    pub depth: usize,
    /// Embedding dimension.
    pub dim: usize,
    /// Weight on the negative term of the contrastive objective.
    pub omega: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub tau0: f64,
    pub tau_min: f64,
    pub gamma_temp: f64,
    pub beta_kl: f64,
    pub beta_nl: f64,
    pub gamma_nl: f64,
    /// Per-level decay of the initial codebook scale.
    pub alpha_init: f64,
    pub depth_dropout_p: f64,
    pub steps: usize,
    pub train_projection: bool,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            codes: 12,
            depth: 12,
            dim: 768,
            omega: 150.0,
            lr: 1e-4,
            batch_size: 384,
            tau0: 1.0,
            tau_min: 0.5,
            gamma_temp: 33333.0,
            beta_kl: 0.0025,
            beta_nl: 0.05,
            gamma_nl: 1.5,
            alpha_init: 0.5,
            depth_dropout_p: 0.3,
            steps: 10_000,
            train_projection: true,
        }
    }
}

impl QuantizerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("quantizer: {m}")));
        if self.codes < 2 || self.codes > u16::MAX as usize {
            return fail("codes must be in [2, 65535]");
        }
        if self.depth < 1 || self.dim < 1 || self.batch_size < 1 {
            return fail("depth, dim and batch_size must be >= 1");
        }
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau0) {
            return fail("need 0 < tau_min <= tau0");
        }
        if self.gamma_temp <= 0.0 || self.gamma_nl <= 0.0 || self.alpha_init <= 0.0 {
            return fail("gamma_temp, gamma_nl and alpha_init must be positive");
        }
        if !(0.0..=1.0).contains(&self.depth_dropout_p) {
            return fail("depth_dropout_p must be in [0, 1]");
        }
        if self.omega < 0.0 || self.beta_kl < 0.0 || self.beta_nl < 0.0 || self.lr < 0.0 {
            return fail("omega, beta_kl, beta_nl and lr must be non-negative");
        }
        Ok(())
    }
}

/// Codebooks plus input projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerModel {
    pub version: u32,
    #[serde(rename = "K")]
    pub codes: usize,
    #[serde(rename = "D")]
    pub depth: usize,
    pub dim: usize,
    /// `dim x dim`, row-major: `z[a] = sum_b projection[a][b] * e[b]`.
    pub projection: Vec<Vec<f64>>,
    /// `codebooks[d][q]` is the embedding of code `q` at level `d`.
    pub codebooks: Vec<Vec<Vec<f64>>>,
    pub config: QuantizerConfig,
}

/// A sampled path with the per-level code distributions it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    pub path: CodePath,
    /// `probs[d]` is `softmax(s_d / tau)` at level `d`.
    pub probs: Vec<Vec<f64>>,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax of `scores / tau`.
pub fn softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = scores.iter().map(|s| ((s - m) / tau).exp()).collect();
    let z: f64 = ex.iter().sum();
    ex.into_iter().map(|e| e / z).collect()
}

/// Index of the largest value, smallest index on ties.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Draw a code from `softmax(scores / tau)` with the Gumbel-max trick.
pub fn gumbel_argmax<R: Rng + ?Sized>(scores: &[f64], tau: f64, rng: &mut R) -> usize {
    let perturbed: Vec<f64> = scores
        .iter()
        .map(|s| {
            // u in (0, 1]
            let u: f64 = 1.0 - rng.random::<f64>();
            s / tau - (-u.ln()).ln()
        })
        .collect();
    argmax(&perturbed)
}

impl QuantizerModel {
    /// Identity projection and Gaussian codebooks whose standard deviation
    /// at level `d` (0-based) is `alpha_init^d / sqrt(dim)`.
    pub fn init<R: Rng + ?Sized>(config: &QuantizerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (k, depth, dim) = (config.codes, config.depth, config.dim);
        let mut projection = vec![vec![0.0; dim]; dim];
        for (i, row) in projection.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let codebooks = (0..depth)
            .map(|d| {
                let std = config.alpha_init.powi(d as i32) / (dim as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("valid std");
                (0..k)
                    .map(|_| (0..dim).map(|_| normal.sample(rng)).collect())
                    .collect()
            })
            .collect();
        Ok(Self {
            version: MODEL_VERSION,
            codes: k,
            depth,
            dim,
            projection,
            codebooks,
            config: config.clone(),
        })
    }

    /// Model with explicit codebooks and an identity projection.
    pub fn from_codebooks(codebooks: Vec<Vec<Vec<f64>>>, config: QuantizerConfig) -> Result<Self> {
        let depth = codebooks.len();
        let codes = codebooks.first().map_or(0, Vec::len);
        let dim = codebooks.first().and_then(|c| c.first()).map_or(0, Vec::len);
        let mut projection = vec![vec![0.0; dim]; dim];
        for (i, row) in projection.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let model = Self {
            version: MODEL_VERSION,
            codes,
            depth,
            dim,
            projection,
            codebooks,
            config: QuantizerConfig {
                codes,
                depth,
                dim,
                ..config
            },
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::format("quantizer model", m));
        if self.version != MODEL_VERSION {
            return Err(Error::Version {
                what: "quantizer model",
                found: self.version,
                expected: MODEL_VERSION,
            });
        }
        if self.codes < 2 {
            return bad(format!("K = {} must be at least 2", self.codes));
        }
        if self.codebooks.len() != self.depth {
            return bad(format!("{} codebooks for D = {}", self.codebooks.len(), self.depth));
        }
        if self.projection.len() != self.dim || self.projection.iter().any(|r| r.len() != self.dim) {
            return bad("projection must be dim x dim".into());
        }
        for (d, cb) in self.codebooks.iter().enumerate() {
            if cb.len() != self.codes || cb.iter().any(|r| r.len() != self.dim) {
                return bad(format!("codebook {d} must be K x dim"));
            }
        }
        let finite = self
            .codebooks
            .iter()
            .flatten()
            .chain(self.projection.iter())
            .flatten()
            .all(|x| x.is_finite());
        if !finite {
            return bad("non-finite parameter".into());
        }
        Ok(())
    }

    /// Apply the input projection.
    pub fn project(&self, embedding: &[f64]) -> Vec<f64> {
        self.projection.iter().map(|row| dot(row, embedding)).collect()
    }

    /// Residual after subtracting the rows selected by `prefix`.
    fn residual(&self, z: &[f64], prefix: &CodePath) -> Vec<f64> {
        let mut r = z.to_vec();
        for (d, &q) in prefix.codes().iter().enumerate() {
            for (ri, ci) in r.iter_mut().zip(&self.codebooks[d][q as usize]) {
                *ri -= ci;
            }
        }
        r
    }

    /// Scores of every code at level `prefix.depth()` for a projected
    /// embedding `z`: `s(q) = -|r - C_d(q)|^2` with `r` the residual.
    pub fn level_scores(&self, z: &[f64], prefix: &CodePath) -> Vec<f64> {
        assert!(prefix.depth() < self.depth, "prefix must be shorter than the hierarchy");
        let r = self.residual(z, prefix);
        self.codebooks[prefix.depth()].iter().map(|c| -sq_dist(&r, c)).collect()
    }

    /// Greedy path of a projected embedding.
    pub fn encode_projected(&self, z: &[f64]) -> CodePath {
        let mut r = z.to_vec();
        let mut codes = Vec::with_capacity(self.depth);
        for cb in &self.codebooks {
            let scores: Vec<f64> = cb.iter().map(|c| -sq_dist(&r, c)).collect();
            let q = argmax(&scores);
            for (ri, ci) in r.iter_mut().zip(&cb[q]) {
                *ri -= ci;
            }
            codes.push(q as u16);
        }
        CodePath(codes)
    }

    /// Greedy path of a raw embedding (projection applied first).
    pub fn encode(&self, embedding: &[f64]) -> CodePath {
        self.encode_projected(&self.project(embedding))
    }

    /// Sample a path for projected `z` at temperature `tau`.
    pub fn sample_path<R: Rng + ?Sized>(&self, z: &[f64], tau: f64, rng: &mut R) -> SampledPath {
        assert!(tau > 0.0, "temperature must be positive");
        let mut r = z.to_vec();
        let mut codes = Vec::with_capacity(self.depth);
        let mut probs = Vec::with_capacity(self.depth);
        for cb in &self.codebooks {
            let scores: Vec<f64> = cb.iter().map(|c| -sq_dist(&r, c)).collect();
            let q = gumbel_argmax(&scores, tau, rng);
            probs.push(softmax(&scores, tau));
            for (ri, ci) in r.iter_mut().zip(&cb[q]) {
                *ri -= ci;
            }
            codes.push(q as u16);
        }
        SampledPath {
            path: CodePath(codes),
            probs,
        }
    }

    /// Sum of the codebook rows selected by `prefix`.
    pub fn path_embedding(&self, prefix: &CodePath) -> Vec<f64> {
        assert!(
            (1..=self.depth).contains(&prefix.depth()),
            "prefix depth must be in 1..=D"
        );
        let mut out = vec![0.0; self.dim];
        for (d, &q) in prefix.codes().iter().enumerate() {
            for (o, c) in out.iter_mut().zip(&self.codebooks[d][q as usize]) {
                *o += c;
            }
        }
        out
    }

    /// Mean over depths of the floored dot product between the cumulative
    /// embeddings of the two paths.
    pub fn subpath_similarity(&self, a: &CodePath, b: &CodePath) -> f64 {
        assert_eq!(a.depth(), b.depth(), "paths must have equal length");
        let depth = a.depth();
        if depth == 0 {
            return 0.0;
        }
        let mut ca = vec![0.0; self.dim];
        let mut cb = vec![0.0; self.dim];
        let mut total = 0.0;
        for d in 0..depth {
            for (x, y) in ca.iter_mut().zip(&self.codebooks[d][a.0[d] as usize]) {
                *x += y;
            }
            for (x, y) in cb.iter_mut().zip(&self.codebooks[d][b.0[d] as usize]) {
                *x += y;
            }
            total += dot(&ca, &cb).max(0.0);
        }
        total / depth as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(json)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    fn worked_example() -> QuantizerModel {
        QuantizerModel::from_codebooks(
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            ],
            QuantizerConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn level_scores_worked_example() {
        let m = worked_example();
        let z = [1.4, 0.1];
        // |(0.4, 0.1)|^2 = 0.17, |(1.4, -0.9)|^2 = 2.77
        let s1 = m.level_scores(&z, &CodePath::default());
        assert!((s1[0] + 0.17).abs() < 1e-12 && (s1[1] + 2.77).abs() < 1e-12, "{s1:?}");
        // residual (0.4, 0.1): |(-0.1, 0.1)|^2 = 0.02, |(0.4, -0.4)|^2 = 0.32
        let s2 = m.level_scores(&z, &CodePath::new(vec![0]));
        assert!((s2[0] + 0.02).abs() < 1e-12 && (s2[1] + 0.32).abs() < 1e-12, "{s2:?}");
        assert_eq!(m.encode(&z), CodePath::new(vec![0, 0]));
    }

    #[test]
    fn exact_row_scores_zero() {
        let m = worked_example();
        let s = m.level_scores(&[0.0, 1.0], &CodePath::default());
        assert_eq!(s[1], 0.0);
        assert!(s[0] < 0.0);
    }

    #[test]
    fn zero_rows_propagate() {
        let m = QuantizerModel::from_codebooks(
            vec![
                vec![vec![1.0, 2.0], vec![-1.0, 0.5]],
                vec![vec![0.3, 0.3], vec![0.0, 0.0]],
                vec![vec![0.0, 0.0], vec![0.2, -0.1]],
            ],
            QuantizerConfig::default(),
        )
        .unwrap();
        assert_eq!(m.encode(&[-1.0, 0.5]), CodePath::new(vec![1, 1, 0]));
        assert_eq!(m.encode(&[0.3, 0.7]), m.encode(&[0.3, 0.7]));
    }

    #[test]
    fn path_embedding_and_similarity() {
        let m = worked_example();
        assert_eq!(m.path_embedding(&CodePath::new(vec![1])), vec![0.0, 1.0]);
        assert_eq!(m.path_embedding(&CodePath::new(vec![0, 0])), vec![1.5, 0.0]);

        let unit = QuantizerModel::from_codebooks(vec![vec![vec![0.6, 0.8], vec![-0.6, -0.8]]], QuantizerConfig::default()).unwrap();
        let a = CodePath::new(vec![0]);
        let b = CodePath::new(vec![1]);
        assert!((unit.subpath_similarity(&a, &a) - 1.0).abs() < 1e-12);
        // dot = -1 floors to exactly 0
        assert_eq!(unit.subpath_similarity(&a, &b), 0.0);

        let zeros = QuantizerModel::from_codebooks(vec![vec![vec![0.0, 0.0], vec![0.0, 0.0]]], QuantizerConfig::default()).unwrap();
        assert_eq!(zeros.path_embedding(&CodePath::new(vec![1])), vec![0.0, 0.0]);
    }

    #[test]
    fn orthogonal_levels_give_zero_similarity() {
        let m = QuantizerModel::from_codebooks(
            vec![
                vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]],
                vec![vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]],
            ],
            QuantizerConfig::default(),
        )
        .unwrap();
        assert_eq!(m.subpath_similarity(&CodePath::new(vec![0, 0]), &CodePath::new(vec![1, 1])), 0.0);
    }

    #[test]
    fn floor_contributes_zero_against_unfloored_oracle() {
        // level-1 dot = 1 * -1 = -1 (floored), level-2 cumulative dot = (1,1).(-1,1) = 0 -> 0, so
        // the floored mean is 0 while the unfloored mean is -0.5.
        let m = QuantizerModel::from_codebooks(
            vec![vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![vec![0.0, 1.0], vec![0.0, 1.0]]],
            QuantizerConfig::default(),
        )
        .unwrap();
        let (a, b) = (CodePath::new(vec![0, 0]), CodePath::new(vec![1, 1]));
        let unfloored: f64 = (1..=2)
            .map(|d| dot(&m.path_embedding(&a.prefix(d)), &m.path_embedding(&b.prefix(d))))
            .sum::<f64>()
            / 2.0;
        assert_eq!(unfloored, -0.5);
        assert_eq!(m.subpath_similarity(&a, &b), 0.0);
    }

    #[test]
    fn gumbel_frequencies_match_softmax() {
        let mut rng = substream(11, "gumbel-unit");
        let n = 100_000;
        let hits = (0..n).filter(|_| gumbel_argmax(&[0.0, -1.0], 1.0, &mut rng) == 0).count();
        let expected = 1.0 / (1.0 + (-1f64).exp());
        assert!((hits as f64 / n as f64 - expected).abs() < 0.01);
    }

    #[test]
    fn init_decays_by_level_and_round_trips() {
        let cfg = QuantizerConfig {
            codes: 4,
            depth: 3,
            dim: 64,
            ..Default::default()
        };
        let m = QuantizerModel::init(&cfg, &mut substream(3, "init")).unwrap();
        let mean_norm = |d: usize| m.codebooks[d].iter().map(|r| dot(r, r).sqrt()).sum::<f64>() / 4.0;
        assert!(mean_norm(0) > mean_norm(1) && mean_norm(1) > mean_norm(2));
        assert!((mean_norm(0) - 1.0).abs() < 0.3);
        let json = m.to_json().unwrap();
        assert!(json.starts_with("{\"version\":1,\"K\":4,\"D\":3,\"dim\":64,\"projection\":"));
        assert_eq!(QuantizerModel::from_json(&json).unwrap(), m);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(QuantizerModel::from_codebooks(vec![vec![vec![1.0]]], QuantizerConfig::default()).is_err());
        let mut m = worked_example();
        m.codebooks[1][0][0] = f64::NAN;
        assert!(m.validate().is_err());
        let bad = QuantizerConfig {
            tau_min: 2.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn small_model(seed: u64) -> QuantizerModel {
        let cfg = QuantizerConfig {
            codes: 3,
            depth: 3,
            dim: 4,
            ..Default::default()
        };
        QuantizerModel::init(&cfg, &mut substream(seed, "prop")).unwrap()
    }

    proptest! {
        #[test]
        fn scores_nonpositive_and_softmax_normalised(seed in 0u64..500, z in prop::collection::vec(-3.0f64..3.0, 4), tau in 0.05f64..5.0) {
            let m = small_model(seed);
            let path = m.encode(&z);
            for d in 0..m.depth {
                let s = m.level_scores(&z, &path.prefix(d));
                prop_assert!(s.iter().all(|&x| x <= 0.0 && x.is_finite()));
                let p = softmax(&s, tau);
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                // greedy choice is the argmax of the level scores
                prop_assert_eq!(argmax(&s), path.0[d] as usize);
            }
        }

        #[test]
        fn similarity_symmetric_nonnegative(seed in 0u64..500, a in prop::collection::vec(0u16..3, 3), b in prop::collection::vec(0u16..3, 3)) {
            let m = small_model(seed);
            let (a, b) = (CodePath::new(a), CodePath::new(b));
            let s = m.subpath_similarity(&a, &b);
            prop_assert!(s >= 0.0);
            prop_assert_eq!(s, m.subpath_similarity(&b, &a));
            let dots: Vec<f64> = (1..=3).map(|d| dot(&m.path_embedding(&a.prefix(d)), &m.path_embedding(&b.prefix(d)))).collect();
            if dots.iter().all(|&x| x > 0.0) {
                prop_assert!(s <= dots.iter().sum::<f64>() / 3.0 + 1e-12);
            }
        }
    }
}
