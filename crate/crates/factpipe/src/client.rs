//! One audited gateway for every LLM call the pipeline makes.
//!
//! Speaks the de-facto chat-completions JSON shape (messages array, first
//! choice's message content), retries transient failures with exponential
//! backoff, enforces a process-wide in-flight bound, and keeps a disk cache
//! so a seeded cache replays a whole run with zero network calls.
//!
//! Credentials come from the `FACTPIPE_API_KEY` environment variable and are
//! never written to cache files or logs.

use crate::hashing::cache_key;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};
use thiserror::Error;
use tokio::sync::Semaphore;

/// Environment variable holding the bearer token sent to the endpoint.
pub const API_KEY_ENV: &str = "FACTPIPE_API_KEY";

#[derive(Debug, Error)]
pub enum ClientError {
    /// Non-retryable endpoint rejection (HTTP 4xx other than 429, or a
    /// response body that does not carry a completion). Aborts the run.
    #[error("permanent endpoint error (http {status}): {message}")]
    Permanent { status: u16, message: String },
    /// Retries exhausted on transient failures (429/5xx/timeouts). Recorded
    /// per unit of work; the run continues.
    #[error("transient failures exhausted after {attempts} attempts: {last_error}")]
    TransientExhausted { attempts: u32, last_error: String },
    #[error("cache io: {0}")]
    CacheIo(#[from] std::io::Error),
    #[error("endpoint not configured (set --endpoint or FACTPIPE_ENDPOINT)")]
    NoEndpoint,
}

impl ClientError {
    pub fn is_transient_exhausted(&self) -> bool {
        matches!(self, ClientError::TransientExhausted { .. })
    }
}

/// One chat completion request. `temperature`, `top_p`, and `max_tokens`
/// carry the run's decoding defaults so identical requests hash identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    #[serde(default)]
    pub system_prompt: Option<String>,
    pub user_prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Canonical single-string rendering of the prompt pair, used for cache
    /// keying.
    pub fn canonical_prompt(&self) -> String {
        match &self.system_prompt {
            Some(system) => format!("<|system|>\n{system}\n<|user|>\n{}", self.user_prompt),
            None => self.user_prompt.clone(),
        }
    }

    /// Stable cache key over model, decoding parameters, and prompt.
    pub fn cache_key(&self) -> String {
        cache_key(
            &self.model_name,
            &self.canonical_prompt(),
            self.temperature,
            self.top_p,
            self.max_tokens,
        )
    }
}

/// A completion, with enough bookkeeping to audit cache hits and retries.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub from_cache: bool,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

/// Exponential backoff schedule for transient failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
    /// Fractional jitter applied to each delay, uniform in `[-j, +j]`.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let base = self.base_delay.as_secs_f64() * self.factor.powi(attempt as i32 - 1);
        let jitter = 1.0 + self.jitter * (rand::random::<f64>() * 2.0 - 1.0);
        Duration::from_secs_f64((base * jitter).max(0.0))
    }
}

/// On-disk cache entry: full request parameters alongside the response, for
/// auditability.
#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    request: ChatRequest,
    response_text: String,
    created_unix: u64,
}

/// Shareable LLM client. Clones share the in-flight bound; the cache is
/// lock-free on read and atomic-rename on write.
#[derive(Clone)]
pub struct LlmClient {
    http: reqwest::Client,
    endpoint_url: String,
    embed_endpoint_url: Option<String>,
    api_key: Option<String>,
    cache_dir: PathBuf,
    semaphore: Arc<Semaphore>,
    retry: RetryPolicy,
}

impl LlmClient {
    /// Build a client. The API key is read from `FACTPIPE_API_KEY`; an empty
    /// endpoint is allowed as long as every request hits the cache.
    pub fn new(endpoint_url: &str, cache_dir: &Path, concurrency_limit: usize) -> LlmClient {
        LlmClient {
            http: reqwest::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("reqwest client"),
            endpoint_url: endpoint_url.to_string(),
            embed_endpoint_url: None,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            cache_dir: cache_dir.to_path_buf(),
            semaphore: Arc::new(Semaphore::new(concurrency_limit.max(1))),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> LlmClient {
        self.retry = retry;
        self
    }

    pub fn with_embed_endpoint(mut self, url: Option<String>) -> LlmClient {
        self.embed_endpoint_url = url;
        self
    }

    /// Cache file location for a request:
    /// `cache_dir/<first 2 hex of key>/<key>.json`.
    pub fn cache_path(&self, req: &ChatRequest) -> PathBuf {
        let key = req.cache_key();
        self.cache_dir.join(&key[..2]).join(format!("{key}.json"))
    }

    /// Complete against the endpoint, retrying transient failures. At most
    /// `concurrency_limit` requests are in flight per client (including
    /// clones) at any time.
    pub async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ClientError> {
        if self.endpoint_url.is_empty() {
            return Err(ClientError::NoEndpoint);
        }
        let mut messages = Vec::new();
        if let Some(system) = &req.system_prompt {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": req.user_prompt}));
        let body = json!({
            "model": req.model_name,
            "messages": messages,
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
        });

        let started = Instant::now();
        let _permit = self
            .semaphore
            .acquire()
            .await
            .expect("semaphore never closed");
        let mut last_error = String::new();
        for attempt in 1..=self.retry.max_attempts {
            match self.send_once(&self.endpoint_url, &body).await {
                Ok(value) => {
                    let text = extract_completion_text(&value).ok_or_else(|| {
                        ClientError::Permanent {
                            status: 200,
                            message: "response carries no choices[0].message.content".into(),
                        }
                    })?;
                    return Ok(ChatResponse {
                        text,
                        from_cache: false,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempt,
                    });
                }
                Err(SendError::Permanent { status, message }) => {
                    return Err(ClientError::Permanent { status, message });
                }
                Err(SendError::Transient(message)) => {
                    last_error = message;
                    if attempt < self.retry.max_attempts {
                        tokio::time::sleep(self.retry.delay(attempt)).await;
                    }
                }
            }
        }
        Err(ClientError::TransientExhausted {
            attempts: self.retry.max_attempts,
            last_error,
        })
    }

    /// Cache-first completion. A hit performs no network call; a miss calls
    /// [`complete`](Self::complete) and persists the response atomically
    /// (temp file + rename). Unparseable cache files count as misses and are
    /// rewritten.
    pub async fn cached_complete(&self, req: &ChatRequest) -> Result<ChatResponse, ClientError> {
        let started = Instant::now();
        let path = self.cache_path(req);
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(entry) = serde_json::from_slice::<CacheEntry>(&bytes) {
                return Ok(ChatResponse {
                    text: entry.response_text,
                    from_cache: true,
                    latency_ms: started.elapsed().as_millis() as u64,
                    attempt_count: 1,
                });
            }
        }
        let response = self.complete(req).await?;
        self.write_cache(&path, req, &response.text)?;
        Ok(response)
    }

    /// Embed a text through the configured embedding endpoint, cache-first.
    /// The endpoint speaks the common embeddings JSON shape
    /// (`{"data": [{"embedding": [...]}]}`).
    pub async fn embed(&self, model_name: &str, text: &str) -> Result<Vec<f64>, ClientError> {
        let key_req = ChatRequest {
            model_name: model_name.to_string(),
            system_prompt: None,
            user_prompt: format!("<|embed|>\n{text}"),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 0,
        };
        let path = self.cache_path(&key_req);
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(entry) = serde_json::from_slice::<CacheEntry>(&bytes) {
                if let Ok(vector) = serde_json::from_str::<Vec<f64>>(&entry.response_text) {
                    return Ok(vector);
                }
            }
        }
        let endpoint = self
            .embed_endpoint_url
            .as_deref()
            .ok_or(ClientError::NoEndpoint)?;
        let body = json!({"model": model_name, "input": [text]});

        let _permit = self
            .semaphore
            .acquire()
            .await
            .expect("semaphore never closed");
        let mut last_error = String::new();
        for attempt in 1..=self.retry.max_attempts {
            match self.send_once(endpoint, &body).await {
                Ok(value) => {
                    let vector = value
                        .get("data")
                        .and_then(|d| d.get(0))
                        .and_then(|first| first.get("embedding"))
                        .and_then(|e| serde_json::from_value::<Vec<f64>>(e.clone()).ok())
                        .ok_or_else(|| ClientError::Permanent {
                            status: 200,
                            message: "response carries no data[0].embedding".into(),
                        })?;
                    let text_form =
                        serde_json::to_string(&vector).expect("vector serializes");
                    self.write_cache(&path, &key_req, &text_form)?;
                    return Ok(vector);
                }
                Err(SendError::Permanent { status, message }) => {
                    return Err(ClientError::Permanent { status, message });
                }
                Err(SendError::Transient(message)) => {
                    last_error = message;
                    if attempt < self.retry.max_attempts {
                        tokio::time::sleep(self.retry.delay(attempt)).await;
                    }
                }
            }
        }
        Err(ClientError::TransientExhausted {
            attempts: self.retry.max_attempts,
            last_error,
        })
    }

    async fn send_once(
        &self,
        endpoint: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, SendError> {
        let mut request = self.http.post(endpoint).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        match request.send().await {
            Ok(response) => {
                let status = response.status().as_u16();
                if status == 429 || status >= 500 {
                    return Err(SendError::Transient(format!("http {status}")));
                }
                if status >= 400 {
                    let message = response.text().await.unwrap_or_default();
                    return Err(SendError::Permanent {
                        status,
                        message: truncate(&message, 500),
                    });
                }
                response
                    .json::<serde_json::Value>()
                    .await
                    .map_err(|e| SendError::Transient(format!("body read: {e}")))
            }
            // Failure to establish a connection means a misconfigured or
            // unreachable endpoint: abort rather than retry. Timeouts and
            // resets after connecting are transient.
            Err(e) if e.is_connect() => Err(SendError::Permanent {
                status: 0,
                message: format!("cannot reach endpoint: {e}"),
            }),
            Err(e) => Err(SendError::Transient(e.to_string())),
        }
    }

    fn write_cache(
        &self,
        path: &Path,
        req: &ChatRequest,
        response_text: &str,
    ) -> Result<(), ClientError> {
        let dir = path.parent().expect("cache path has parent");
        std::fs::create_dir_all(dir)?;
        let entry = CacheEntry {
            request: req.clone(),
            response_text: response_text.to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer(&tmp, &entry).map_err(std::io::Error::from)?;
        tmp.persist(path).map_err(|e| ClientError::CacheIo(e.error))?;
        Ok(())
    }
}

enum SendError {
    Permanent { status: u16, message: String },
    Transient(String),
}

fn extract_completion_text(value: &serde_json::Value) -> Option<String> {
    value
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

fn truncate(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        s.to_string()
    } else {
        s.chars().take(max).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str) -> ChatRequest {
        ChatRequest {
            model_name: "m".into(),
            system_prompt: None,
            user_prompt: prompt.into(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 256,
        }
    }

    #[test]
    fn cache_layout_uses_key_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let client = LlmClient::new("", dir.path(), 1);
        let r = req("hello");
        let path = client.cache_path(&r);
        let key = r.cache_key();
        assert!(path.ends_with(Path::new(&key[..2]).join(format!("{key}.json"))));
    }

    #[test]
    fn distinct_models_get_distinct_cache_entries() {
        let a = req("same prompt");
        let mut b = req("same prompt");
        b.model_name = "other".into();
        assert_ne!(a.cache_key(), b.cache_key());
    }

    #[test]
    fn system_prompt_participates_in_the_key() {
        let a = req("p");
        let mut b = req("p");
        b.system_prompt = Some("s".into());
        assert_ne!(a.cache_key(), b.cache_key());
    }

    #[tokio::test]
    async fn seeded_cache_entry_is_returned_without_network() {
        let dir = tempfile::tempdir().unwrap();
        // Endpoint intentionally unset: any network attempt would error.
        let client = LlmClient::new("", dir.path(), 1);
        let r = req("seeded");
        let path = client.cache_path(&r);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let entry = serde_json::json!({
            "request": serde_json::to_value(&r).unwrap(),
            "response_text": "True",
            "created_unix": 0,
        });
        std::fs::write(&path, serde_json::to_vec(&entry).unwrap()).unwrap();

        let response = client.cached_complete(&r).await.unwrap();
        assert!(response.from_cache);
        assert_eq!(response.attempt_count, 1);
        assert_eq!(response.text, "True");
    }

    #[tokio::test]
    async fn corrupt_cache_entry_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let client = LlmClient::new("", dir.path(), 1);
        let r = req("corrupt");
        let path = client.cache_path(&r);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, b"{not json").unwrap();
        // Miss falls through to the (unconfigured) endpoint.
        let err = client.cached_complete(&r).await.unwrap_err();
        assert!(matches!(err, ClientError::NoEndpoint));
    }

    #[test]
    fn retry_delays_grow_geometrically() {
        let policy = RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(100),
            factor: 2.0,
            jitter: 0.0,
        };
        assert_eq!(policy.delay(1), Duration::from_millis(100));
        assert_eq!(policy.delay(2), Duration::from_millis(200));
        assert_eq!(policy.delay(3), Duration::from_millis(400));
    }

    #[test]
    fn jitter_stays_within_fraction() {
        let policy = RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(1000),
            factor: 2.0,
            jitter: 0.2,
        };
        for _ in 0..200 {
            let d = policy.delay(1).as_secs_f64();
            assert!((0.8..=1.2).contains(&d), "delay {d} outside jitter band");
        }
    }
}
