//! Text generators: a scripted mock and a chat-completions HTTP client.

mod http;
mod mock;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{EngineError, Result};

pub use http::{HttpConfig, HttpGenerator, RetryPolicy};
pub use mock::{MockEntry, MockGenerator, MockReply, MockScript, PromptMatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment_ref: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Call index within a query. The mock keys replies on it; HTTP ignores it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_hint: Option<u64>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        Self {
            prompt: prompt.into(),
            attachment_ref: None,
            temperature,
            max_tokens,
            seed_hint: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(EngineError::Request(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(EngineError::Request("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReply {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub endpoint_id: String,
    /// Counts were computed locally because the provider sent no usage block.
    #[serde(default)]
    pub usage_estimated: bool,
    #[serde(default)]
    pub retries: u32,
}

#[async_trait]
pub trait Generator: Send + Sync {
    async fn complete(&self, req: &GenerationRequest) -> Result<GenerationReply>;

    fn endpoint_id(&self) -> &str;
}

/// Lowercase hex SHA-256 of the prompt bytes.
pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}
