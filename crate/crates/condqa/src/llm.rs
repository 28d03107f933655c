//! Completion backends behind a single blocking interface.
//!
//! `LiveClient` talks to a chat-completion HTTP endpoint. `ReplayClient`
//! serves completions from a directory of fixture files keyed by a digest
//! of the request, and can optionally record misses through an inner
//! client. Runs against a complete fixture set are fully deterministic.

use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Generation parameters sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl GenParams {
    /// Greedy decoding with the fixed seed used throughout.
    pub fn deterministic(model: impl Into<String>) -> Self {
        GenParams { model: model.into(), temperature: 0.0, max_tokens: 1024, seed: 42 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

/// One model response.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub backend: BackendKind,
    pub latency: Duration,
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("no fixture for key {key}")]
    FixtureMiss { key: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),
    #[error("fixture {path} is unreadable: {message}")]
    BadFixture { path: String, message: String },
    #[error("api key environment variable {0} is not set")]
    MissingApiKey(String),
}

/// A blocking completion backend. Implementations must be shareable across
/// the threads that verify conditions concurrently.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<Completion, LlmError>;
}

/// Content digest identifying a request: model, temperature, seed, and the
/// prompt bytes, each length-prefixed so fields cannot bleed into each
/// other. Stable across runs and platforms.
pub fn fixture_key(prompt: &str, params: &GenParams) -> String {
    let mut hasher = Sha256::new();
    let mut push = |label: &str, value: &str| {
        hasher.update(label.as_bytes());
        hasher.update(value.len().to_le_bytes());
        hasher.update(value.as_bytes());
    };
    push("model", &params.model);
    push("temperature", &params.temperature.to_string());
    push("seed", &params.seed.to_string());
    push("prompt", prompt);
    format!("{:x}", hasher.finalize())
}

/// On-disk fixture layout: one JSON file per request named `<key>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub prompt: String,
    pub params: GenParams,
    pub response: String,
}

/// Serves completions from fixture files. With a fallback client attached,
/// misses are forwarded to it and the responses recorded, so a live run can
/// be captured once and replayed forever.
pub struct ReplayClient {
    dir: PathBuf,
    fallback: Option<Box<dyn CompletionClient>>,
    write_lock: Mutex<()>,
}

impl ReplayClient {
    pub fn strict(dir: impl Into<PathBuf>) -> Self {
        ReplayClient { dir: dir.into(), fallback: None, write_lock: Mutex::new(()) }
    }

    pub fn recording(dir: impl Into<PathBuf>, fallback: Box<dyn CompletionClient>) -> Self {
        ReplayClient { dir: dir.into(), fallback: Some(fallback), write_lock: Mutex::new(()) }
    }

    pub fn fixture_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn read_fixture(&self, key: &str) -> Result<Option<FixtureRecord>, LlmError> {
        let path = self.fixture_path(key);
        let raw = match std::fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => {
                return Err(LlmError::BadFixture {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })
            }
        };
        serde_json::from_str(&raw).map(Some).map_err(|e| LlmError::BadFixture {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    fn write_fixture(&self, key: &str, record: &FixtureRecord) -> Result<(), LlmError> {
        let _guard = self.write_lock.lock().unwrap();
        std::fs::create_dir_all(&self.dir).map_err(|e| LlmError::BadFixture {
            path: self.dir.display().to_string(),
            message: e.to_string(),
        })?;
        let path = self.fixture_path(key);
        let pretty = serde_json::to_string_pretty(record).expect("fixture records serialize");
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, pretty).and_then(|_| std::fs::rename(&tmp, &path)).map_err(|e| {
            LlmError::BadFixture { path: path.display().to_string(), message: e.to_string() }
        })
    }
}

impl CompletionClient for ReplayClient {
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<Completion, LlmError> {
        let key = fixture_key(prompt, params);
        let start = Instant::now();
        if let Some(record) = self.read_fixture(&key)? {
            return Ok(Completion {
                text: record.response,
                backend: BackendKind::Replay,
                latency: start.elapsed(),
                usage: None,
            });
        }
        match &self.fallback {
            Some(inner) => {
                let completion = inner.complete(prompt, params)?;
                self.write_fixture(
                    &key,
                    &FixtureRecord {
                        prompt: prompt.to_string(),
                        params: params.clone(),
                        response: completion.text.clone(),
                    },
                )?;
                Ok(completion)
            }
            None => Err(LlmError::FixtureMiss { key }),
        }
    }
}

/// Checks that every fixture file in a directory is parseable and named by
/// the digest of its own content. Returns the number of fixtures checked.
pub fn verify_fixture_dir(dir: &Path) -> Result<usize, LlmError> {
    let entries = std::fs::read_dir(dir).map_err(|e| LlmError::BadFixture {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut checked = 0usize;
    for entry in entries {
        let entry = entry.map_err(|e| LlmError::BadFixture {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let raw = std::fs::read_to_string(&path).map_err(|e| LlmError::BadFixture {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let record: FixtureRecord = serde_json::from_str(&raw).map_err(|e| LlmError::BadFixture {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let expected = fixture_key(&record.prompt, &record.params);
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if stem != expected {
            return Err(LlmError::BadFixture {
                path: path.display().to_string(),
                message: format!("file name does not match content digest {expected}"),
            });
        }
        checked += 1;
    }
    Ok(checked)
}

/// Counting semaphore bounding in-flight live requests.
pub(crate) struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Semaphore { permits: Mutex::new(permits.max(1)), available: Condvar::new() }
    }

    pub fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

pub(crate) struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.semaphore.permits.lock().unwrap() += 1;
        self.semaphore.available.notify_one();
    }
}

/// Retry schedule for transient failures.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, base_delay: Duration::from_millis(500) }
    }
}

/// Whether an error is worth retrying (transport trouble or rate limiting;
/// anything else is final).
fn transient(error: &LlmError) -> bool {
    matches!(
        error,
        LlmError::RateLimited { .. }
            | LlmError::Timeout { .. }
            | LlmError::Transport(_)
            | LlmError::Http { status: 500..=599, .. }
    )
}

/// Runs `attempt` up to the policy's limit, sleeping exponentially longer
/// between transient failures.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    mut attempt: impl FnMut() -> Result<T, LlmError>,
) -> Result<T, LlmError> {
    let mut delay = policy.base_delay;
    let mut last = None;
    for n in 1..=policy.max_attempts.max(1) {
        match attempt() {
            Ok(v) => return Ok(v),
            Err(e) if transient(&e) && n < policy.max_attempts => {
                std::thread::sleep(delay);
                delay = delay.saturating_mul(2);
                last = Some(e);
            }
            Err(e) => {
                // Tag the terminal error with the attempt count where it
                // carries one.
                return Err(match e {
                    LlmError::RateLimited { .. } => LlmError::RateLimited { attempts: n },
                    LlmError::Timeout { .. } => LlmError::Timeout { attempts: n },
                    other => other,
                });
            }
        }
    }
    Err(last.unwrap_or(LlmError::Transport("retry loop exhausted".into())))
}

/// Configuration of a live chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    pub base_url: String,
    #[serde(default = "default_chat_path")]
    pub chat_path: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_concurrency")]
    pub max_in_flight: usize,
}

fn default_chat_path() -> String {
    "/v1/chat/completions".to_string()
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_concurrency() -> usize {
    4
}

/// JSON body of a chat-completion request.
pub fn build_request_body(prompt: &str, params: &GenParams) -> serde_json::Value {
    serde_json::json!({
        "model": params.model,
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
        "seed": params.seed,
        "messages": [{"role": "user", "content": prompt}],
    })
}

/// Pulls the completion text and usage out of a chat-completion response.
pub fn parse_response_body(body: &serde_json::Value) -> Result<(String, Option<TokenUsage>), LlmError> {
    let text = body
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(|c| c.as_str())
        .ok_or_else(|| LlmError::MalformedResponse("no choices[0].message.content".into()))?
        .to_string();
    let usage = body.get("usage").and_then(|u| {
        Some(TokenUsage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()? as u32,
            completion_tokens: u.get("completion_tokens")?.as_u64()? as u32,
        })
    });
    Ok((text, usage))
}

/// Blocking HTTP client for a chat-completion endpoint, with bounded
/// concurrency and retries on transient failures.
pub struct LiveClient {
    config: LiveConfig,
    retry: RetryPolicy,
    http: reqwest::blocking::Client,
    semaphore: Semaphore,
}

impl LiveClient {
    pub fn new(config: LiveConfig) -> Result<Self, LlmError> {
        Self::with_retry(config, RetryPolicy::default())
    }

    pub fn with_retry(config: LiveConfig, retry: RetryPolicy) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let semaphore = Semaphore::new(config.max_in_flight);
        Ok(LiveClient { config, retry, http, semaphore })
    }

    fn endpoint(&self) -> String {
        format!(
            "{}{}",
            self.config.base_url.trim_end_matches('/'),
            self.config.chat_path
        )
    }

    fn send_once(&self, prompt: &str, params: &GenParams, api_key: &str) -> Result<Completion, LlmError> {
        let _permit = self.semaphore.acquire();
        let start = Instant::now();
        let response = self
            .http
            .post(self.endpoint())
            .bearer_auth(api_key)
            .json(&build_request_body(prompt, params))
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    LlmError::Timeout { attempts: 1 }
                } else {
                    LlmError::Transport(e.to_string())
                }
            })?;
        let status = response.status();
        if status.as_u16() == 429 {
            return Err(LlmError::RateLimited { attempts: 1 });
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(LlmError::Http { status: status.as_u16(), body });
        }
        let body: serde_json::Value =
            response.json().map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        let (text, usage) = parse_response_body(&body)?;
        Ok(Completion { text, backend: BackendKind::Live, latency: start.elapsed(), usage })
    }
}

impl CompletionClient for LiveClient {
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<Completion, LlmError> {
        let api_key = std::env::var(&self.config.api_key_env)
            .map_err(|_| LlmError::MissingApiKey(self.config.api_key_env.clone()))?;
        with_retries(&self.retry, || self.send_once(prompt, params, &api_key))
    }
}
