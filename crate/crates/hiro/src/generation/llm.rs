//! Chat-completion clients: an OpenAI-compatible HTTP backend and offline
//! mocks.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::JsonEndpoint;
use crate::io::sha256_hex;

/// Environment variable holding the bearer token for the LLM endpoint.
pub const LLM_API_KEY_ENV: &str = "HIRO_LLM_API_KEY";
/// Environment variable overriding the configured LLM endpoint.
pub const LLM_ENDPOINT_ENV: &str = "HIRO_LLM_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    /// Length hint taken from the prompt template.
    pub max_words: usize,
    pub temperature: f64,
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<String>;

    /// Model or backend name recorded with each summary.
    fn id(&self) -> String;
}

impl<T: LlmClient + ?Sized> LlmClient for Box<T> {
    fn complete(&self, request: &LlmRequest) -> Result<String> {
        (**self).complete(request)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

impl<T: LlmClient + ?Sized> LlmClient for &T {
    fn complete(&self, request: &LlmRequest) -> Result<String> {
        (**self).complete(request)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

/// One recorded completion. `prompt_sha256` is the hex SHA-256 of the
/// prompt text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub prompt_sha256: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockLlm {
    /// Returns the first line of the prompt's sentence list.
    Echo,
    Constant(String),
    /// Answers from recorded completions keyed by prompt digest.
    Replay(HashMap<String, String>),
}

impl MockLlm {
    pub fn replay_from_file(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut map = HashMap::new();
        for line in raw.lines().filter(|l| !l.trim().is_empty()) {
            let rec: ReplayRecord = serde_json::from_str(line)?;
            map.insert(rec.prompt_sha256, rec.response);
        }
        Ok(MockLlm::Replay(map))
    }
}

/// The first non-empty line after the first blank line, which is where
/// every prompt template puts its input list.
fn first_listed_line(prompt: &str) -> &str {
    let mut lines = prompt.lines();
    for l in lines.by_ref() {
        if l.trim().is_empty() {
            break;
        }
    }
    lines.find(|l| !l.trim().is_empty()).unwrap_or("").trim()
}

impl LlmClient for MockLlm {
    fn complete(&self, request: &LlmRequest) -> Result<String> {
        match self {
            MockLlm::Echo => Ok(first_listed_line(&request.prompt).to_string()),
            MockLlm::Constant(s) => Ok(s.clone()),
            MockLlm::Replay(map) => {
                let key = sha256_hex(request.prompt.as_bytes());
                map.get(&key)
                    .cloned()
                    .ok_or_else(|| Error::Precondition(format!("no recorded completion for prompt {key}")))
            }
        }
    }

    fn id(&self) -> String {
        match self {
            MockLlm::Echo => "mock-echo".into(),
            MockLlm::Constant(_) => "mock-constant".into(),
            MockLlm::Replay(_) => "mock-replay".into(),
        }
    }
}

/// Wraps a client and keeps every prompt/response pair, for building
/// replay fixtures.
pub struct RecordingLlm<C> {
    inner: C,
    records: Mutex<Vec<ReplayRecord>>,
}

impl<C: LlmClient> RecordingLlm<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            records: Mutex::new(Vec::new()),
        }
    }

    /// Recorded pairs as JSONL, sorted by prompt digest.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut recs = self.records.lock().expect("recording lock").clone();
        recs.sort_by(|a, b| a.prompt_sha256.cmp(&b.prompt_sha256));
        recs.dedup();
        let mut out = String::new();
        for r in recs {
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

impl<C: LlmClient> LlmClient for RecordingLlm<C> {
    fn complete(&self, request: &LlmRequest) -> Result<String> {
        let response = self.inner.complete(request)?;
        self.records.lock().expect("recording lock").push(ReplayRecord {
            prompt_sha256: sha256_hex(request.prompt.as_bytes()),
            response: response.clone(),
        });
        Ok(response)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatContent,
}

#[derive(Deserialize)]
struct ChatContent {
    #[serde(default)]
    content: Option<String>,
}

/// OpenAI-compatible chat completions endpoint.
pub struct HttpLlm {
    endpoint: JsonEndpoint,
    model: String,
}

impl HttpLlm {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: Option<String>, max_retries: usize, timeout: Duration) -> Result<Self> {
        Ok(Self {
            endpoint: JsonEndpoint::new("llm", url.into(), api_key, max_retries, timeout)?,
            model: model.into(),
        })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.endpoint.backoff = backoff;
        self
    }
}

impl LlmClient for HttpLlm {
    fn complete(&self, request: &LlmRequest) -> Result<String> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
        };
        let resp: ChatResponse = self.endpoint.post(&body)?;
        let choice = resp.choices.into_iter().next().ok_or_else(|| Error::Transport {
            service: "llm",
            attempts: 1,
            message: "response has no choices".into(),
        })?;
        Ok(choice.message.content.unwrap_or_default())
    }

    fn id(&self) -> String {
        self.model.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmBackend {
    #[default]
    Echo,
    Constant {
        text: String,
    },
    Replay {
        fixture: PathBuf,
    },
    Http {
        #[serde(default)]
        endpoint: Option<String>,
        model: String,
        #[serde(default = "crate::nli::default_retries")]
        max_retries: usize,
        #[serde(default = "crate::nli::default_timeout")]
        timeout_secs: u64,
    },
}

impl LlmBackend {
    /// Instantiate the client; relative fixture paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<Box<dyn LlmClient>> {
        Ok(match self {
            LlmBackend::Echo => Box::new(MockLlm::Echo),
            LlmBackend::Constant { text } => Box::new(MockLlm::Constant(text.clone())),
            LlmBackend::Replay { fixture } => {
                let path = if fixture.is_absolute() { fixture.clone() } else { base.join(fixture) };
                Box::new(MockLlm::replay_from_file(&path)?)
            }
            LlmBackend::Http {
                endpoint,
                model,
                max_retries,
                timeout_secs,
            } => {
                let url = std::env::var(LLM_ENDPOINT_ENV)
                    .ok()
                    .or_else(|| endpoint.clone())
                    .ok_or_else(|| Error::Config(format!("llm endpoint missing: set it in the config or {LLM_ENDPOINT_ENV}")))?;
                let key = std::env::var(LLM_API_KEY_ENV).ok();
                Box::new(HttpLlm::new(url, model.clone(), key, *max_retries, Duration::from_secs(*timeout_secs))?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str) -> LlmRequest {
        LlmRequest {
            prompt: prompt.into(),
            max_words: 10,
            temperature: 0.0,
        }
    }

    #[test]
    fn echo_returns_first_listed_sentence() {
        let p = "Here is a list:\n\nPool is warm.\nStaff kind.\n\nWrite:\n";
        assert_eq!(MockLlm::Echo.complete(&req(p)).unwrap(), "Pool is warm.");
        assert_eq!(MockLlm::Echo.complete(&req("no list")).unwrap(), "");
    }

    #[test]
    fn replay_round_trip() {
        let rec = RecordingLlm::new(MockLlm::Constant("Nice hotel.".into()));
        rec.complete(&req("b")).unwrap();
        rec.complete(&req("a")).unwrap();
        rec.complete(&req("a")).unwrap();
        let jsonl = rec.to_jsonl().unwrap();
        assert_eq!(jsonl.lines().count(), 2);
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("replay.jsonl");
        fs::write(&f, jsonl).unwrap();
        let replay = LlmBackend::Replay { fixture: "replay.jsonl".into() }.build(dir.path()).unwrap();
        assert_eq!(replay.complete(&req("a")).unwrap(), "Nice hotel.");
        assert!(replay.complete(&req("c")).is_err());
        assert_eq!(replay.id(), "mock-replay");
    }

    #[test]
    fn backend_config_parses() {
        let b: LlmBackend = serde_json::from_str(r#"{"kind":"http","endpoint":"http://x/v1/chat/completions","model":"m"}"#).unwrap();
        assert!(matches!(b, LlmBackend::Http { max_retries: 3, .. }));
        let c: LlmBackend = serde_json::from_str(r#"{"kind":"constant","text":"Hi."}"#).unwrap();
        assert_eq!(c.build(Path::new(".")).unwrap().complete(&req("x")).unwrap(), "Hi.");
    }
}
