//! Completion clients: an HTTP client for a hosted model and a fixture-backed mock.

use std::collections::HashMap;
use std::io::BufRead;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::prompt::prompt_transitional;
use crate::event_log::normalize_query;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("completion request timed out")]
    Timeout,

    #[error("transport error: {0}")]
    TransportError(String),

    #[error("non-retryable status {0}")]
    NonRetryableStatus(u16),

    #[error("no fixture matches the prompt")]
    NoFixture,
}

pub trait LlmClient: Send + Sync {
    /// Raw completion text for `prompt`.
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpClientConfig {
    pub endpoint: String,
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// First retry delay, doubled on each further retry.
    pub backoff_ms: u64,
    pub max_concurrency: usize,
    /// JSON pointer to the completion text in the response body.
    pub response_path: String,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        HttpClientConfig {
            endpoint: "http://127.0.0.1:8000/v1/completions".into(),
            model: "solar-10.7b-instruct".into(),
            max_tokens: 256,
            temperature: 0.0,
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: 200,
            max_concurrency: 4,
            response_path: "/choices/0/text".into(),
        }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Permits {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Blocking HTTP completion client with a request cap and retry on transient failures.
///
/// Connection failures, 429 and 5xx are retried with exponential backoff. A request
/// that exceeds its deadline fails with [`LlmError::Timeout`] straight away.
pub struct HttpLlmClient {
    config: HttpClientConfig,
    http: reqwest::blocking::Client,
    permits: Permits,
}

impl HttpLlmClient {
    pub fn new(config: HttpClientConfig) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| LlmError::TransportError(e.to_string()))?;
        let permits = Permits::new(config.max_concurrency);
        Ok(HttpLlmClient { config, http, permits })
    }

    fn attempt(&self, prompt: &str) -> Result<String, Attempt> {
        let body = CompletionRequest {
            model: &self.config.model,
            prompt,
            max_tokens: self.config.max_tokens,
            temperature: self.config.temperature,
        };
        let resp = self.http.post(&self.config.endpoint).json(&body).send().map_err(|e| {
            if e.is_timeout() {
                Attempt::Fatal(LlmError::Timeout)
            } else {
                Attempt::Retry(e.to_string())
            }
        })?;

        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(LlmError::NonRetryableStatus(status.as_u16())));
        }
        let body: Value = resp.json().map_err(|e| {
            if e.is_timeout() {
                Attempt::Fatal(LlmError::Timeout)
            } else {
                Attempt::Fatal(LlmError::TransportError(format!("bad response body: {e}")))
            }
        })?;
        body.pointer(&self.config.response_path)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                Attempt::Fatal(LlmError::TransportError(format!(
                    "no completion text at {}",
                    self.config.response_path
                )))
            })
    }
}

enum Attempt {
    Retry(String),
    Fatal(LlmError),
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let _permit = self.permits.acquire();
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(prompt) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    if attempt >= self.config.max_retries {
                        return Err(LlmError::TransportError(format!(
                            "{msg} (after {} retries)",
                            self.config.max_retries
                        )));
                    }
                    attempt += 1;
                    thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }
}

/// One canned exchange. `prompt` matches a prompt exactly, `transitional` matches
/// any prompt built for that transitional query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitional: Option<String>,
    pub response: String,
}

/// Deterministic client answering from canned fixtures.
#[derive(Debug, Clone, Default)]
pub struct MockLlmClient {
    by_prompt: HashMap<String, String>,
    by_transitional: HashMap<String, String>,
}

impl MockLlmClient {
    pub fn new(fixtures: impl IntoIterator<Item = MockFixture>) -> Self {
        let mut mock = MockLlmClient::default();
        for f in fixtures {
            if let Some(p) = f.prompt {
                mock.by_prompt.entry(p).or_insert_with(|| f.response.clone());
            }
            if let Some(t) = f.transitional {
                let key = normalize_query(&t).unwrap_or(t);
                mock.by_transitional.entry(key).or_insert(f.response);
            }
        }
        mock
    }

    /// Reads JSONL fixtures; the first entry wins for duplicate keys.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, MockFixtureError> {
        let mut fixtures = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| MockFixtureError {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let f: MockFixture = serde_json::from_str(&line).map_err(|e| MockFixtureError {
                line: i + 1,
                message: e.to_string(),
            })?;
            fixtures.push(f);
        }
        Ok(MockLlmClient::new(fixtures))
    }

    /// Mock that answers `response` to every prompt.
    pub fn echo(response: impl Into<String>) -> EchoClient {
        EchoClient(response.into())
    }
}

impl LlmClient for MockLlmClient {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        if let Some(r) = self.by_prompt.get(prompt) {
            return Ok(r.clone());
        }
        prompt_transitional(prompt)
            .and_then(|t| self.by_transitional.get(&t))
            .cloned()
            .ok_or(LlmError::NoFixture)
    }
}

#[derive(Debug, Error)]
#[error("bad mock fixture at line {line}: {message}")]
pub struct MockFixtureError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct EchoClient(String);

impl LlmClient for EchoClient {
    fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
        Ok(self.0.clone())
    }
}
