//! Entailment-based summary metrics: prevalence, genericness and
//! attribution support.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nli::EntailmentClient;

/// Mean, over summary sentences, of the fraction of reviews that contain at
/// least one sentence entailing it. An empty summary scores 0.
///
/// `reviews` holds the sentences of each input review.
pub fn prevalence<S: AsRef<str> + Sync>(
    summary: &[String],
    reviews: &[Vec<S>],
    nli: &dyn EntailmentClient,
    threshold: f64,
) -> Result<f64> {
    if reviews.is_empty() {
        return Err(Error::Precondition("prevalence needs at least one review".into()));
    }
    if summary.is_empty() {
        return Ok(0.0);
    }
    let per_sentence = summary
        .par_iter()
        .map(|hyp| {
            let mut supported = 0usize;
            for review in reviews {
                for premise in review {
                    if nli.entails(premise.as_ref(), hyp, threshold)? {
                        supported += 1;
                        break;
                    }
                }
            }
            Ok(supported as f64 / reviews.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_sentence.iter().sum::<f64>() / per_sentence.len() as f64)
}

/// For each entity, the mean over its summary sentences of how many other
/// entities' summaries (whole text as premise) entail the sentence.
pub fn genericness(summaries: &[Vec<String>], nli: &dyn EntailmentClient, threshold: f64) -> Result<Vec<f64>> {
    if summaries.len() < 2 {
        return Err(Error::Precondition("genericness needs at least two entities".into()));
    }
    let joined: Vec<String> = summaries.iter().map(|s| s.join(" ")).collect();
    summaries
        .par_iter()
        .enumerate()
        .map(|(e, sentences)| {
            if sentences.is_empty() {
                return Ok(0.0);
            }
            let mut total = 0usize;
            for hyp in sentences {
                for (other, premise) in joined.iter().enumerate() {
                    if other != e && !premise.is_empty() && nli.entails(premise, hyp, threshold)? {
                        total += 1;
                    }
                }
            }
            Ok(total as f64 / sentences.len() as f64)
        })
        .collect()
}

/// Specificity-adjusted prevalence.
///
/// ```
/// assert!((hiro::eval::sap(36.3, 20.5, 0.5) - 26.05).abs() < 1e-9);
/// ```
pub fn sap(prevalence: f64, genericness: f64, alpha: f64) -> f64 {
    prevalence - alpha * genericness
}

/// A summary sentence with the clusters it claims as evidence. Sentence-wise
/// modes carry one cluster; document mode carries every cluster.
#[derive(Debug, Clone)]
pub struct AttributionItem<'a> {
    pub sentence: &'a str,
    pub evidence: Vec<Vec<&'a str>>,
}

/// Percentages of summary sentences with at least one supporting evidence
/// sentence (partial) and with supporters making up at least half of a
/// cluster (majority). Support holds if entailment goes either way; with
/// several clusters the best ratio counts. An empty summary scores (0, 0).
pub fn attribution_support(items: &[AttributionItem<'_>], nli: &dyn EntailmentClient, threshold: f64) -> Result<(f64, f64)> {
    if items.is_empty() {
        return Ok((0.0, 0.0));
    }
    let ratios = items
        .par_iter()
        .map(|item| {
            if item.evidence.iter().all(|c| c.is_empty()) {
                return Err(Error::Precondition(format!("summary sentence without evidence: {:?}", item.sentence)));
            }
            let mut best: f64 = 0.0;
            for cluster in item.evidence.iter().filter(|c| !c.is_empty()) {
                let mut support = 0usize;
                for &ev in cluster {
                    if nli.entails(ev, item.sentence, threshold)? || nli.entails(item.sentence, ev, threshold)? {
                        support += 1;
                    }
                }
                best = best.max(support as f64 / cluster.len() as f64);
            }
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = ratios.len() as f64;
    let partial = ratios.iter().filter(|&&r| r > 0.0).count() as f64 / n * 100.0;
    let majority = ratios.iter().filter(|&&r| r >= 0.5).count() as f64 / n * 100.0;
    Ok((partial, majority))
}
