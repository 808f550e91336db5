//! Evaluation: reference-free summary metrics, ROUGE, cluster agreement and
//! hierarchy quality, plus the report files.

mod ari;
mod quality;
mod rouge;
mod support;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use ari::{adjusted_rand_index, cluster_ari};
pub use quality::{
    cluster_quality, clusters_at_depth, ClusterQuality, NliSimilarity, PairSimilarity, SimilarityMode, MAX_EXHAUSTIVE_PAIRS,
};
pub use rouge::{rouge, rouge2_tokens, rouge_l_tokens, rouge_multi, RougeVariant};
pub use support::{attribution_support, genericness, prevalence, sap, AttributionItem};

use crate::corpus::split_sentences;
use crate::error::{Error, Result};
use crate::ids::{EntityId, SentenceId};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Weight of genericness in SAP.
    pub alpha_sap: f64,
    /// Similarity used for purity and colocation.
    pub similarity: SimilarityMode,
    /// Minimum ROUGE-2 F1 for a sentence to join a reference sentence's
    /// oracle cluster.
    pub oracle_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            alpha_sap: 0.5,
            similarity: SimilarityMode::Tfidf,
            oracle_threshold: 0.25,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha_sap.is_finite() || self.alpha_sap < 0.0 {
            return Err(Error::Config("eval.alpha_sap must be a finite value >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.oracle_threshold) {
            return Err(Error::Config("eval.oracle_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Metrics of one entity, averaged over summary samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMetrics {
    pub entity_id: EntityId,
    pub samples: usize,
    pub prevalence: f64,
    pub genericness: f64,
    pub sap: f64,
    pub rouge2_f1: Option<f64>,
    pub rouge_l_f1: Option<f64>,
    /// Absent for summaries without evidence (zero-shot).
    pub partial_support_pct: Option<f64>,
    pub majority_support_pct: Option<f64>,
    pub ari: Option<f64>,
}

/// Means over entities; optional metrics average over the entities that
/// have them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub entities: usize,
    pub prevalence: f64,
    pub genericness: f64,
    pub sap: f64,
    pub rouge2_f1: Option<f64>,
    pub rouge_l_f1: Option<f64>,
    /// Absent for summaries without evidence (zero-shot).
    pub partial_support_pct: Option<f64>,
    pub majority_support_pct: Option<f64>,
    pub ari: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyQuality {
    pub depth: usize,
    #[serde(flatten)]
    pub quality: ClusterQuality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub similarity: SimilarityMode,
    /// Quality of the retrieved clusters, averaged over entities.
    pub retrieved: Option<ClusterQuality>,
    /// Quality of the whole index at each depth.
    pub by_depth: Vec<HierarchyQuality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub mode: String,
    pub alpha_sap: f64,
    pub nli_backend: String,
    pub entities: Vec<EntityMetrics>,
    pub aggregate: AggregateMetrics,
    pub clusters: ClusterMetrics,
    /// The configuration the run used, verbatim.
    pub config: serde_json::Value,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn mean_opt<'a>(xs: impl Iterator<Item = &'a Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().copied().collect();
    (!v.is_empty()).then(|| mean(v.into_iter()))
}

impl AggregateMetrics {
    pub fn from_entities(entities: &[EntityMetrics]) -> Self {
        Self {
            entities: entities.len(),
            prevalence: mean(entities.iter().map(|e| e.prevalence)),
            genericness: mean(entities.iter().map(|e| e.genericness)),
            sap: mean(entities.iter().map(|e| e.sap)),
            rouge2_f1: mean_opt(entities.iter().map(|e| &e.rouge2_f1)),
            rouge_l_f1: mean_opt(entities.iter().map(|e| &e.rouge_l_f1)),
            partial_support_pct: mean_opt(entities.iter().map(|e| &e.partial_support_pct)),
            majority_support_pct: mean_opt(entities.iter().map(|e| &e.majority_support_pct)),
            ari: mean_opt(entities.iter().map(|e| &e.ari)),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    /// One row per entity plus a final `ALL` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "entity_id,samples,prevalence,genericness,sap,rouge2_f1,rouge_l_f1,partial_support_pct,majority_support_pct,ari\n",
        );
        for e in &self.entities {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                csv_field(e.entity_id.as_str()),
                e.samples,
                e.prevalence,
                e.genericness,
                e.sap,
                cell(e.rouge2_f1),
                cell(e.rouge_l_f1),
                cell(e.partial_support_pct),
                cell(e.majority_support_pct),
                cell(e.ari)
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(
            out,
            "ALL,,{},{},{},{},{},{},{},{}",
            a.prevalence,
            a.genericness,
            a.sap,
            cell(a.rouge2_f1),
            cell(a.rouge_l_f1),
            cell(a.partial_support_pct),
            cell(a.majority_support_pct),
            cell(a.ari)
        );
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `depth,count` lines for plotting the selected-subpath depth distribution.
pub fn depth_histogram_csv(hist: &BTreeMap<usize, usize>) -> String {
    let mut out = String::from("depth,count\n");
    for (d, c) in hist {
        let _ = writeln!(out, "{d},{c}");
    }
    out
}

/// Oracle clusters for one entity: one cluster per reference sentence,
/// holding every input sentence whose ROUGE-2 F1 with it reaches
/// `threshold`. Empty clusters are dropped; a sentence may appear in
/// several clusters.
pub fn oracle_clusters(reference: &str, sentences: &[(SentenceId, &str)], threshold: f64) -> Vec<Vec<SentenceId>> {
    split_sentences(reference)
        .iter()
        .map(|r| {
            let mut ids: Vec<SentenceId> = sentences
                .iter()
                .filter(|(_, t)| rouge(t, r, RougeVariant::R2F1) >= threshold)
                .map(|(id, _)| id.clone())
                .collect();
            ids.sort();
            ids
        })
        .filter(|c| !c.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(id: &str, prev: f64, r2: Option<f64>) -> EntityMetrics {
        EntityMetrics {
            entity_id: id.into(),
            samples: 1,
            prevalence: prev,
            genericness: 0.5,
            sap: sap(prev, 0.5, 0.5),
            rouge2_f1: r2,
            rouge_l_f1: None,
            partial_support_pct: Some(100.0),
            majority_support_pct: Some(50.0),
            ari: None,
        }
    }

    #[test]
    fn aggregate_and_csv() {
        let es = vec![metrics("a", 0.5, Some(0.2)), metrics("b,c", 0.25, None)];
        let agg = AggregateMetrics::from_entities(&es);
        assert_eq!(agg.prevalence, 0.375);
        assert_eq!(agg.rouge2_f1, Some(0.2));
        assert_eq!(agg.ari, None);
        assert!((agg.sap - sap(agg.prevalence, agg.genericness, 0.5)).abs() < 1e-9);
        let report = EvalReport {
            version: REPORT_VERSION,
            mode: "ext".into(),
            alpha_sap: 0.5,
            nli_backend: "mock".into(),
            entities: es,
            aggregate: agg,
            clusters: ClusterMetrics {
                similarity: SimilarityMode::Tfidf,
                retrieved: None,
                by_depth: vec![],
            },
            config: serde_json::json!({}),
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "a,1,0.5,0.5,0.25,0.2,,100,50,");
        assert!(lines[2].starts_with("\"b,c\",1,0.25,"));
        assert!(lines[3].starts_with("ALL,,0.375,"));
    }

    #[test]
    fn histogram_csv() {
        let hist = BTreeMap::from([(1, 2), (3, 1)]);
        assert_eq!(depth_histogram_csv(&hist), "depth,count\n1,2\n3,1\n");
    }

    #[test]
    fn oracle_from_reference() {
        let sents = vec![
            (SentenceId::from("e/r1/0"), "The pool was warm."),
            (SentenceId::from("e/r2/0"), "Staff were very friendly."),
            (SentenceId::from("e/r3/0"), "The pool was warm and clean."),
        ];
        let clusters = oracle_clusters("The pool was warm. Staff were friendly. Parking is free.", &sents, 0.25);
        assert_eq!(clusters, vec![vec![SentenceId::from("e/r1/0"), "e/r3/0".into()], vec!["e/r2/0".into()]]);
    }
}
