//! Weighted InfoNCE over hierarchical path embeddings, with entropy and
//! norm regularisers, and its analytic gradient.
//!
//! Sampling is separated from differentiation. [`draw_sample`] fixes the
//! hard Gumbel codes, the reference distributions `p̄` and the depth-dropout
//! truncation of every row; [`loss_and_grad`] then evaluates the
//! straight-through surrogate, in which the code weights at level `d` are
//! `onehot(q_d) + p_d - p̄_d`. At the sampled point the weights are exactly
//! one-hot, and the returned gradient is the exact gradient of that surrogate
//! with the frozen quantities held constant, so it can be checked against
//! finite differences of [`loss_value`].

use rand::Rng;

use super::{dot, softmax, QuantizerModel};

/// One mini-batch of positive pairs.
///
/// Items are indexed `0..B` for the queries followed by `B..2B` for their
/// positives; `mask` is `2B x 2B` over that item order and marks which items
/// may serve as negatives for a query row.
#[derive(Debug, Clone)]
pub struct PairBatch<'a> {
    pub queries: Vec<&'a [f64]>,
    pub positives: Vec<&'a [f64]>,
    pub rho: Vec<f64>,
    pub mask: Vec<Vec<bool>>,
}

impl<'a> PairBatch<'a> {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    fn item(&self, i: usize) -> &'a [f64] {
        let b = self.len();
        if i < b {
            self.queries[i]
        } else {
            self.positives[i - b]
        }
    }

    /// Negative item indices for query row `i`.
    fn negatives(&self, i: usize) -> Vec<usize> {
        let b = self.len();
        (0..2 * b)
            .filter(|&j| j != i && j != b + i && self.mask[i][j])
            .collect()
    }
}

/// Sampling decisions held fixed while the loss is differentiated.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenSample {
    /// `codes[item][level]`.
    pub codes: Vec<Vec<usize>>,
    /// `ref_probs[item][level]`: distribution the code was drawn from.
    pub ref_probs: Vec<Vec<Vec<f64>>>,
    /// Truncation depth (1..=D) used for every similarity of query row `i`.
    pub depths: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean over pairs of `-rho * log f`.
    pub infonce: f64,
    /// Negative mean per-level code entropy (before `beta_kl`).
    pub entropy: f64,
    /// Norm-ratio penalty (before `beta_nl`).
    pub norm: f64,
}

/// Gradient with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub projection: Vec<Vec<f64>>,
    pub codebooks: Vec<Vec<Vec<f64>>>,
}

impl Gradients {
    pub fn zeros_like(model: &QuantizerModel) -> Self {
        Self {
            projection: vec![vec![0.0; model.dim]; model.dim],
            codebooks: vec![vec![vec![0.0; model.dim]; model.codes]; model.depth],
        }
    }

    /// Parameters in the order codebooks (level, code, dim) then projection.
    pub fn flatten(&self) -> Vec<f64> {
        self.codebooks
            .iter()
            .flatten()
            .flatten()
            .chain(self.projection.iter().flatten())
            .copied()
            .collect()
    }
}

/// Forward quantities of one item needed for the backward pass.
struct Trace {
    /// Residual entering each level.
    residual: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    log_probs: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    /// Cumulative path embedding after each level.
    cumulative: Vec<Vec<f64>>,
}

fn log_softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + scaled.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    scaled.into_iter().map(|x| x - lse).collect()
}

fn level_scores(residual: &[f64], codebook: &[Vec<f64>]) -> Vec<f64> {
    codebook
        .iter()
        .map(|c| -residual.iter().zip(c).map(|(r, x)| (r - x) * (r - x)).sum::<f64>())
        .collect()
}

fn forward_item(model: &QuantizerModel, z: &[f64], codes: &[usize], ref_probs: &[Vec<f64>], tau: f64) -> Trace {
    let dim = model.dim;
    let mut r = z.to_vec();
    let mut acc = vec![0.0; dim];
    let mut trace = Trace {
        residual: Vec::with_capacity(model.depth),
        probs: Vec::with_capacity(model.depth),
        log_probs: Vec::with_capacity(model.depth),
        weights: Vec::with_capacity(model.depth),
        cumulative: Vec::with_capacity(model.depth),
    };
    for (d, cb) in model.codebooks.iter().enumerate() {
        let s = level_scores(&r, cb);
        let p = softmax(&s, tau);
        let lp = log_softmax(&s, tau);
        let w: Vec<f64> = (0..model.codes)
            .map(|q| {
                let hard = if q == codes[d] { 1.0 } else { 0.0 };
                hard + (p[q] - ref_probs[d][q])
            })
            .collect();
        let mut y = vec![0.0; dim];
        for (q, row) in cb.iter().enumerate() {
            if w[q] != 0.0 {
                for (yi, ci) in y.iter_mut().zip(row) {
                    *yi += w[q] * ci;
                }
            }
        }
        trace.residual.push(r.clone());
        for k in 0..dim {
            r[k] -= y[k];
            acc[k] += y[k];
        }
        trace.probs.push(p);
        trace.log_probs.push(lp);
        trace.weights.push(w);
        trace.cumulative.push(acc.clone());
    }
    trace
}

/// Sample hard codes for every item and the depth-dropout truncation of
/// every query row.
pub fn draw_sample<R: Rng + ?Sized>(
    model: &QuantizerModel,
    batch: &PairBatch<'_>,
    tau: f64,
    depth_dropout_p: f64,
    rng: &mut R,
) -> FrozenSample {
    let n_items = 2 * batch.len();
    let mut codes = Vec::with_capacity(n_items);
    let mut ref_probs = Vec::with_capacity(n_items);
    for i in 0..n_items {
        let z = model.project(batch.item(i));
        let sampled = model.sample_path(&z, tau, rng);
        codes.push(sampled.path.codes().iter().map(|&c| c as usize).collect());
        ref_probs.push(sampled.probs);
    }
    let depths = (0..batch.len())
        .map(|_| {
            if depth_dropout_p > 0.0 && rng.random::<f64>() < depth_dropout_p {
                rng.random_range(1..=model.depth)
            } else {
                model.depth
            }
        })
        .collect();
    FrozenSample {
        codes,
        ref_probs,
        depths,
    }
}

/// Sample, then evaluate loss and gradient at the sampled point.
pub fn contrastive_loss<R: Rng + ?Sized>(
    model: &QuantizerModel,
    batch: &PairBatch<'_>,
    tau: f64,
    rng: &mut R,
) -> (LossBreakdown, Gradients, FrozenSample) {
    let frozen = draw_sample(model, batch, tau, model.config.depth_dropout_p, rng);
    let (loss, grad) = loss_and_grad(model, batch, &frozen, tau);
    (loss, grad, frozen)
}

/// Surrogate loss without gradients.
pub fn loss_value(model: &QuantizerModel, batch: &PairBatch<'_>, frozen: &FrozenSample, tau: f64) -> LossBreakdown {
    evaluate(model, batch, frozen, tau, false).0
}

/// Surrogate loss and its exact gradient with `frozen` held constant.
pub fn loss_and_grad(
    model: &QuantizerModel,
    batch: &PairBatch<'_>,
    frozen: &FrozenSample,
    tau: f64,
) -> (LossBreakdown, Gradients) {
    let (loss, grad) = evaluate(model, batch, frozen, tau, true);
    (loss, grad.expect("gradient requested"))
}

fn evaluate(
    model: &QuantizerModel,
    batch: &PairBatch<'_>,
    frozen: &FrozenSample,
    tau: f64,
    want_grad: bool,
) -> (LossBreakdown, Option<Gradients>) {
    let b = batch.len();
    let n_items = 2 * b;
    let (depth, codes, dim) = (model.depth, model.codes, model.dim);
    let cfg = &model.config;

    let inputs: Vec<&[f64]> = (0..n_items).map(|i| batch.item(i)).collect();
    let traces: Vec<Trace> = inputs
        .iter()
        .enumerate()
        .map(|(i, e)| forward_item(model, &model.project(e), &frozen.codes[i], &frozen.ref_probs[i], tau))
        .collect();

    // d loss / d cumulative[item][level]
    let mut g_cum = vec![vec![vec![0.0; dim]; depth]; if want_grad { n_items } else { 0 }];

    // Contrastive term.
    let mut infonce = 0.0;
    for i in 0..b {
        let negatives = batch.negatives(i);
        if negatives.is_empty() || cfg.omega == 0.0 {
            continue;
        }
        let di = frozen.depths[i].clamp(1, depth);
        let dots = |j: usize| -> Vec<f64> {
            (0..di)
                .map(|d| dot(&traces[i].cumulative[d], &traces[j].cumulative[d]))
                .collect()
        };
        let sim = |ds: &[f64]| ds.iter().map(|x| x.max(0.0)).sum::<f64>() / di as f64;

        let mut others = vec![b + i];
        others.extend(&negatives);
        let all_dots: Vec<Vec<f64>> = others.iter().map(|&j| dots(j)).collect();
        let log_w = (cfg.omega / negatives.len() as f64).ln();
        let logits: Vec<f64> = all_dots
            .iter()
            .enumerate()
            .map(|(k, ds)| if k == 0 { sim(ds) } else { sim(ds) + log_w })
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let rho = batch.rho[i];
        infonce += rho * (lse - logits[0]) / b as f64;

        if want_grad {
            for (k, &j) in others.iter().enumerate() {
                let pi = (logits[k] - lse).exp();
                let g_sim = if k == 0 { rho * (pi - 1.0) } else { rho * pi } / b as f64;
                let g = g_sim / di as f64;
                for d in 0..di {
                    if all_dots[k][d] > 0.0 {
                        for x in 0..dim {
                            let ci = traces[i].cumulative[d][x];
                            let cj = traces[j].cumulative[d][x];
                            g_cum[i][d][x] += g * cj;
                            g_cum[j][d][x] += g * ci;
                        }
                    }
                }
            }
        }
    }

    // Entropy: mean over items and levels of sum_q p log p.
    let ent_scale = 1.0 / (n_items * depth) as f64;
    let mut entropy = 0.0;
    for t in &traces {
        for d in 0..depth {
            entropy += ent_scale * t.probs[d].iter().zip(&t.log_probs[d]).map(|(p, lp)| p * lp).sum::<f64>();
        }
    }

    // Norm penalty on consecutive mean row norms.
    let row_norms: Vec<Vec<f64>> = model
        .codebooks
        .iter()
        .map(|cb| cb.iter().map(|r| dot(r, r).sqrt()).collect())
        .collect();
    let means: Vec<f64> = row_norms.iter().map(|n| n.iter().sum::<f64>() / codes as f64).collect();
    let norm: f64 = (0..depth.saturating_sub(1))
        .map(|d| (means[d + 1] - means[d] / cfg.gamma_nl).powi(2))
        .sum();

    let loss = LossBreakdown {
        total: infonce + cfg.beta_kl * entropy + cfg.beta_nl * norm,
        infonce,
        entropy,
        norm,
    };
    if !want_grad {
        return (loss, None);
    }

    let mut grad = Gradients::zeros_like(model);

    // Norm penalty gradient.
    if cfg.beta_nl != 0.0 {
        let mut g_mean = vec![0.0; depth];
        for d in 0..depth.saturating_sub(1) {
            let gap = means[d + 1] - means[d] / cfg.gamma_nl;
            g_mean[d + 1] += 2.0 * gap;
            g_mean[d] -= 2.0 * gap / cfg.gamma_nl;
        }
        for d in 0..depth {
            for q in 0..codes {
                let n = row_norms[d][q];
                if n > 0.0 {
                    let f = cfg.beta_nl * g_mean[d] / (codes as f64 * n);
                    for (g, c) in grad.codebooks[d][q].iter_mut().zip(&model.codebooks[d][q]) {
                        *g += f * c;
                    }
                }
            }
        }
    }

    // Backward through the quantizer, item by item.
    for (i, t) in traces.iter().enumerate() {
        let mut g_res_next = vec![0.0; dim];
        let mut g_cum_total = vec![0.0; dim];
        for d in (0..depth).rev() {
            let cb = &model.codebooks[d];
            for x in 0..dim {
                g_cum_total[x] += g_cum[i][d][x];
            }
            let g_y: Vec<f64> = (0..dim).map(|x| g_cum_total[x] - g_res_next[x]).collect();

            let mut g_w = vec![0.0; codes];
            for q in 0..codes {
                let w = t.weights[d][q];
                if w != 0.0 {
                    for (g, gy) in grad.codebooks[d][q].iter_mut().zip(&g_y) {
                        *g += w * gy;
                    }
                }
                g_w[q] = dot(&cb[q], &g_y);
            }

            // Straight-through: d w / d p = identity.
            let p = &t.probs[d];
            let lp = &t.log_probs[d];
            let mean_gw: f64 = p.iter().zip(&g_w).map(|(a, b)| a * b).sum();
            let mean_lp: f64 = p.iter().zip(lp).map(|(a, b)| a * b).sum();
            let ent_coef = cfg.beta_kl * ent_scale;
            let g_s: Vec<f64> = (0..codes)
                .map(|q| p[q] * ((g_w[q] - mean_gw) + ent_coef * (lp[q] - mean_lp)) / tau)
                .collect();

            // s_q = -|r - C_q|^2
            let r = &t.residual[d];
            let mut g_res = g_res_next.clone();
            for q in 0..codes {
                if g_s[q] == 0.0 {
                    continue;
                }
                for x in 0..dim {
                    let diff = r[x] - cb[q][x];
                    g_res[x] -= 2.0 * g_s[q] * diff;
                    grad.codebooks[d][q][x] += 2.0 * g_s[q] * diff;
                }
            }
            g_res_next = g_res;
        }
        let e = inputs[i];
        for (row, gz) in grad.projection.iter_mut().zip(&g_res_next) {
            if *gz != 0.0 {
                for (g, x) in row.iter_mut().zip(e) {
                    *g += gz * x;
                }
            }
        }
    }

    (loss, Some(grad))
}
