//! Entailment oracles: an HTTP client for an external NLI service and
//! deterministic mocks for offline use.

use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::http::JsonEndpoint;

/// Environment variable holding the bearer token for the NLI service.
pub const NLI_API_KEY_ENV: &str = "HIRO_NLI_API_KEY";
/// Environment variable overriding the configured NLI endpoint.
pub const NLI_ENDPOINT_ENV: &str = "HIRO_NLI_ENDPOINT";

/// Something that can estimate P(premise entails hypothesis).
pub trait EntailmentClient: Send + Sync {
    fn p_entail(&self, premise: &str, hypothesis: &str) -> Result<f64>;

    /// Short backend identifier recorded in reports.
    fn id(&self) -> String;

    fn entails(&self, premise: &str, hypothesis: &str, threshold: f64) -> Result<bool> {
        Ok(self.p_entail(premise, hypothesis)? > threshold)
    }
}

impl<T: EntailmentClient + ?Sized> EntailmentClient for &T {
    fn p_entail(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        (**self).p_entail(premise, hypothesis)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

impl<T: EntailmentClient + ?Sized> EntailmentClient for Box<T> {
    fn p_entail(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        (**self).p_entail(premise, hypothesis)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntailmentLabel {
    Entailed,
    NotEntailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentVerdict {
    pub premise_id: String,
    pub hypothesis_id: String,
    pub p_entail: f64,
    pub label: EntailmentLabel,
}

impl EntailmentVerdict {
    pub fn new(premise_id: String, hypothesis_id: String, p_entail: f64, threshold: f64) -> Self {
        let label = if p_entail > threshold {
            EntailmentLabel::Entailed
        } else {
            EntailmentLabel::NotEntailed
        };
        Self {
            premise_id,
            hypothesis_id,
            p_entail,
            label,
        }
    }

    pub fn is_entailed(&self) -> bool {
        self.label == EntailmentLabel::Entailed
    }
}

/// Jaccard overlap of the token sets of two texts; 0 when both are empty.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let a: HashSet<String> = tokenize(a).into_iter().collect();
    let b: HashSet<String> = tokenize(b).into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Offline entailment rules.
#[derive(Debug, Clone, PartialEq)]
pub enum MockNli {
    /// Entailed (p = 1) iff token Jaccard overlap is at least `min_overlap`.
    Jaccard { min_overlap: f64 },
    /// Entailed iff the two texts tokenize identically.
    Identity,
    /// Fixed probability for every pair.
    Constant(f64),
}

impl EntailmentClient for MockNli {
    fn p_entail(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        Ok(match self {
            MockNli::Jaccard { min_overlap } => {
                if token_jaccard(premise, hypothesis) >= *min_overlap {
                    1.0
                } else {
                    0.0
                }
            }
            MockNli::Identity => {
                let p = tokenize(premise);
                if !p.is_empty() && p == tokenize(hypothesis) {
                    1.0
                } else {
                    0.0
                }
            }
            MockNli::Constant(p) => *p,
        })
    }

    fn id(&self) -> String {
        match self {
            MockNli::Jaccard { min_overlap } => format!("mock-jaccard-{min_overlap}"),
            MockNli::Identity => "mock-identity".into(),
            MockNli::Constant(p) => format!("mock-constant-{p}"),
        }
    }
}

#[derive(Serialize)]
struct NliRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct NliResponse {
    p_entail: f64,
}

/// Client for `POST {"premise","hypothesis"} -> {"p_entail"}`.
#[derive(Debug, Clone)]
pub struct HttpNli {
    endpoint: JsonEndpoint,
}

impl HttpNli {
    pub fn new(url: impl Into<String>, api_key: Option<String>, max_retries: usize, timeout: Duration) -> Result<Self> {
        Ok(Self {
            endpoint: JsonEndpoint::new("nli", url, api_key, max_retries, timeout)?,
        })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.endpoint.backoff = backoff;
        self
    }
}

impl EntailmentClient for HttpNli {
    fn p_entail(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        let resp: NliResponse = self.endpoint.post(&NliRequest { premise, hypothesis })?;
        if !(0.0..=1.0).contains(&resp.p_entail) {
            return Err(Error::format("nli response", format!("p_entail {} outside [0, 1]", resp.p_entail)));
        }
        Ok(resp.p_entail)
    }

    fn id(&self) -> String {
        format!("http:{}", self.endpoint.url)
    }
}

/// Backend selection as it appears in the pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NliBackend {
    Jaccard {
        #[serde(default = "default_min_overlap")]
        min_overlap: f64,
    },
    Identity,
    Constant {
        p: f64,
    },
    Http {
        #[serde(default)]
        endpoint: Option<String>,
        #[serde(default = "default_retries")]
        max_retries: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_min_overlap() -> f64 {
    0.5
}

pub(crate) fn default_retries() -> usize {
    3
}

pub(crate) fn default_timeout() -> u64 {
    60
}

impl Default for NliBackend {
    fn default() -> Self {
        NliBackend::Jaccard {
            min_overlap: default_min_overlap(),
        }
    }
}

impl NliBackend {
    /// Instantiate the client; HTTP endpoints and keys may come from the
    /// environment.
    pub fn build(&self) -> Result<Box<dyn EntailmentClient>> {
        Ok(match self {
            NliBackend::Jaccard { min_overlap } => Box::new(MockNli::Jaccard {
                min_overlap: *min_overlap,
            }),
            NliBackend::Identity => Box::new(MockNli::Identity),
            NliBackend::Constant { p } => Box::new(MockNli::Constant(*p)),
            NliBackend::Http {
                endpoint,
                max_retries,
                timeout_secs,
            } => {
                let url = std::env::var(NLI_ENDPOINT_ENV)
                    .ok()
                    .or_else(|| endpoint.clone())
                    .ok_or_else(|| Error::Config(format!("http NLI backend needs an endpoint or {NLI_ENDPOINT_ENV}")))?;
                let key = std::env::var(NLI_API_KEY_ENV).ok();
                Box::new(HttpNli::new(url, key, *max_retries, Duration::from_secs(*timeout_secs))?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jaccard_mock_rule() {
        let nli = MockNli::Jaccard { min_overlap: 0.5 };
        // {great, pool} vs {great, pool, area}: 2/3
        assert_eq!(nli.p_entail("Great pool.", "great pool area").unwrap(), 1.0);
        // {great, pool} vs {rude, staff}: 0
        assert_eq!(nli.p_entail("Great pool.", "Rude staff.").unwrap(), 0.0);
        // {a, b} vs {b, c}: 1/3
        assert_eq!(nli.p_entail("a b", "b c").unwrap(), 0.0);
        // exactly 0.5 counts as entailed
        assert_eq!(nli.p_entail("a b", "a b c d").unwrap(), 1.0);
    }

    #[test]
    fn verdict_threshold_is_strict() {
        assert!(!EntailmentVerdict::new("a".into(), "b".into(), 0.5, 0.5).is_entailed());
        assert!(EntailmentVerdict::new("a".into(), "b".into(), 0.51, 0.5).is_entailed());
    }

    #[test]
    fn backend_config_round_trip() {
        let b: NliBackend = serde_json::from_str(r#"{"kind":"http","endpoint":"http://x"}"#).unwrap();
        assert_eq!(
            b,
            NliBackend::Http {
                endpoint: Some("http://x".into()),
                max_retries: 3,
                timeout_secs: 60
            }
        );
        let j: NliBackend = serde_json::from_str(r#"{"kind":"jaccard"}"#).unwrap();
        assert_eq!(j, NliBackend::default());
    }
}
