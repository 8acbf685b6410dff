use std::time::Duration;

use async_trait::async_trait;
use log::{debug, warn};
use mpolab_core::text::word_count;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::{GenerationReply, GenerationRequest, Generator};
use crate::error::{EngineError, Result};

/// Longest slice of an error body kept in [`EngineError::Http`].
const ERROR_BODY_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 1000,
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Sleep before attempt `attempt + 1`, given `attempt` failures so far.
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms as f64 * self.factor.powi(attempt.saturating_sub(1) as i32);
        Duration::from_millis(ms.round() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Full URL of the chat-completions route.
    pub endpoint_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub max_concurrency: usize,
    /// Forward `attachment_ref` as an image-URL content part.
    pub multimodal: bool,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
    pub endpoint_id: Option<String>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://127.0.0.1:8000/v1/chat/completions".to_string(),
            model: "default".to_string(),
            api_key_env: None,
            max_concurrency: 4,
            multimodal: false,
            timeout_ms: 120_000,
            retry: RetryPolicy::default(),
            endpoint_id: None,
        }
    }
}

/// Client for any endpoint speaking the chat-completions wire format.
pub struct HttpGenerator {
    cfg: HttpConfig,
    client: reqwest::Client,
    api_key: Option<String>,
    admission: Semaphore,
    endpoint_id: String,
}

impl std::fmt::Debug for HttpGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpGenerator")
            .field("endpoint_id", &self.endpoint_id)
            .field("model", &self.cfg.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

enum Attempt {
    Done(GenerationReply),
    Retry(EngineError),
    Fail(EngineError),
}

impl HttpGenerator {
    pub fn new(cfg: HttpConfig) -> Result<Self> {
        if cfg.max_concurrency == 0 {
            return Err(EngineError::Config("max_concurrency must be at least 1".into()));
        }
        if cfg.retry.max_attempts == 0 {
            return Err(EngineError::Config("retry.max_attempts must be at least 1".into()));
        }
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| EngineError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| EngineError::Config(format!("cannot build HTTP client: {e}")))?;
        let endpoint_id = cfg
            .endpoint_id
            .clone()
            .unwrap_or_else(|| format!("{}#{}", cfg.endpoint_url, cfg.model));
        Ok(Self {
            admission: Semaphore::new(cfg.max_concurrency),
            cfg,
            client,
            api_key,
            endpoint_id,
        })
    }

    /// Wire body for `req`. The prompt is copied byte for byte.
    pub fn request_body(&self, req: &GenerationRequest) -> Value {
        let content = match (&req.attachment_ref, self.cfg.multimodal) {
            (Some(url), true) => json!([
                {"type": "text", "text": req.prompt},
                {"type": "image_url", "image_url": {"url": url}}
            ]),
            (Some(_), false) => {
                warn!("{}: endpoint is text-only; dropping attachment", self.endpoint_id);
                json!(req.prompt)
            }
            (None, _) => json!(req.prompt),
        };
        json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
    }

    async fn attempt(&self, body: &Value, req: &GenerationRequest, attempt: u32) -> Attempt {
        let _permit = self.admission.acquire().await.expect("admission semaphore closed");
        let mut call = self.client.post(&self.cfg.endpoint_url).json(body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = match call.send().await {
            Ok(r) => r,
            Err(e) => {
                let err = EngineError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                };
                return if e.is_timeout() || e.is_connect() {
                    Attempt::Retry(err)
                } else {
                    Attempt::Fail(err)
                };
            }
        };
        let status = resp.status();
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry(EngineError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                })
            }
        };
        if !status.is_success() {
            let err = EngineError::Http {
                status: status.as_u16(),
                attempts: attempt,
                body: truncate(&text, ERROR_BODY_LIMIT),
            };
            return if status.as_u16() == 429 || status.is_server_error() {
                Attempt::Retry(err)
            } else {
                Attempt::Fail(err)
            };
        }
        match parse_reply(&text, &req.prompt, &self.endpoint_id) {
            Ok(reply) => Attempt::Done(reply),
            Err(e) => Attempt::Fail(e),
        }
    }
}

#[async_trait]
impl Generator for HttpGenerator {
    async fn complete(&self, req: &GenerationRequest) -> Result<GenerationReply> {
        req.validate()?;
        let body = self.request_body(req);
        let mut attempt = 1;
        loop {
            match self.attempt(&body, req, attempt).await {
                Attempt::Done(mut reply) => {
                    reply.retries = attempt - 1;
                    if reply.retries > 0 {
                        debug!("{}: succeeded after {} retries", self.endpoint_id, reply.retries);
                    }
                    return Ok(reply);
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt >= self.cfg.retry.max_attempts => return Err(e),
                Attempt::Retry(e) => {
                    let wait = self.cfg.retry.delay(attempt);
                    warn!(
                        "{}: attempt {attempt} failed ({e}); retrying in {wait:?}",
                        self.endpoint_id
                    );
                    tokio::time::sleep(wait).await;
                    attempt += 1;
                }
            }
        }
    }

    fn endpoint_id(&self) -> &str {
        &self.endpoint_id
    }
}

fn truncate(s: &str, limit: usize) -> String {
    match s.char_indices().nth(limit) {
        Some((idx, _)) => format!("{}…", &s[..idx]),
        None => s.to_string(),
    }
}

/// Reads `choices[0].message.content` and the usage block of a response.
fn parse_reply(raw: &str, prompt: &str, endpoint_id: &str) -> Result<GenerationReply> {
    let v: Value = serde_json::from_str(raw)
        .map_err(|e| EngineError::Response(format!("{e}: {}", truncate(raw, ERROR_BODY_LIMIT))))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| EngineError::Response("missing choices[0].message.content".into()))?
        .to_string();
    let usage = |field: &str| v.pointer(&format!("/usage/{field}")).and_then(Value::as_u64);
    let (prompt_tokens, completion_tokens, usage_estimated) = match (usage("prompt_tokens"), usage("completion_tokens"))
    {
        (Some(p), Some(c)) => (p, c, false),
        _ => (word_count(prompt) as u64, word_count(&text) as u64, true),
    };
    Ok(GenerationReply {
        text,
        prompt_tokens,
        completion_tokens,
        endpoint_id: endpoint_id.to_string(),
        usage_estimated,
        retries: 0,
    })
}
