//! Blocking JSON-over-HTTP with bounded retries, shared by the NLI, LLM and
//! embedding clients.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct JsonEndpoint {
    pub service: &'static str,
    pub url: String,
    pub bearer: Option<String>,
    pub max_retries: usize,
    pub backoff: Duration,
    client: reqwest::blocking::Client,
}

impl JsonEndpoint {
    pub fn new(
        service: &'static str,
        url: impl Into<String>,
        bearer: Option<String>,
        max_retries: usize,
        timeout: Duration,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("{service} client: {e}")))?;
        Ok(Self {
            service,
            url: url.into(),
            bearer,
            max_retries,
            backoff: Duration::from_millis(200),
            client,
        })
    }

    /// POST `body` and decode the response, retrying transport errors,
    /// 408/429 and 5xx responses up to `max_retries` extra times.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp> {
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * (1 << (attempt - 1).min(6)) as u32);
            }
            let mut req = self.client.post(&self.url).json(body);
            if let Some(token) = &self.bearer {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let text = resp.text().map_err(|e| self.fail(attempt + 1, e.to_string()))?;
                        return serde_json::from_str(&text)
                            .map_err(|e| self.fail(attempt + 1, format!("invalid response body: {e}")));
                    }
                    last = format!("HTTP {status}");
                    let retryable = status.is_server_error()
                        || status.as_u16() == 408
                        || status.as_u16() == 429;
                    if !retryable {
                        return Err(self.fail(attempt + 1, last));
                    }
                }
                Err(e) => last = e.to_string(),
            }
            tracing::debug!(service = self.service, attempt, error = %last, "retrying request");
        }
        Err(self.fail(attempts, last))
    }

    fn fail(&self, attempts: usize, message: String) -> Error {
        Error::Transport {
            service: self.service,
            attempts,
            message,
        }
    }
}
