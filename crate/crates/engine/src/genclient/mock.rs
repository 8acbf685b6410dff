use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use mpolab_core::text::word_count;
use serde::{Deserialize, Serialize};

use super::{prompt_sha256, GenerationReply, GenerationRequest, Generator};
use crate::error::{EngineError, Result};

/// How a script entry selects prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMatch {
    /// Exact prompt, by lowercase hex SHA-256.
    Sha256(String),
    /// Any prompt containing the substring.
    Contains(String),
    Any,
}

impl PromptMatch {
    fn matches(&self, prompt: &str, sha: &str) -> bool {
        match self {
            PromptMatch::Sha256(h) => h.eq_ignore_ascii_case(sha),
            PromptMatch::Contains(s) => prompt.contains(s.as_str()),
            PromptMatch::Any => true,
        }
    }
}

/// One scripted reply. Token counts default to whitespace word counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prompt_tokens: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        completion_tokens: Option<u64>,
    },
    Error {
        error: String,
    },
}

impl MockReply {
    pub fn text(text: impl Into<String>) -> Self {
        MockReply::Text {
            text: text.into(),
            prompt_tokens: None,
            completion_tokens: None,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        MockReply::Error { error: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    #[serde(rename = "match")]
    pub matcher: PromptMatch,
    pub replies: Vec<MockReply>,
    /// Wrap around instead of failing once the replies run out.
    #[serde(default)]
    pub cycle: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default = "default_endpoint")]
    pub endpoint_id: String,
    /// Tried in order; the first matching entry answers.
    pub entries: Vec<MockEntry>,
}

fn default_endpoint() -> String {
    "mock".to_string()
}

impl MockScript {
    pub fn from_path(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// Deterministic generator replaying a [`MockScript`].
///
/// The reply for a request is `replies[i]` of the first matching entry, where
/// `i` is the request's `seed_hint`, or a per-prompt call counter when absent.
pub struct MockGenerator {
    script: MockScript,
    counters: Mutex<HashMap<String, u64>>,
}

impl MockGenerator {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            counters: Mutex::new(HashMap::new()),
        }
    }

    /// Every prompt gets `text`, forever.
    pub fn constant(text: impl Into<String>) -> Self {
        Self::new(MockScript {
            endpoint_id: default_endpoint(),
            entries: vec![MockEntry {
                matcher: PromptMatch::Any,
                replies: vec![MockReply::text(text)],
                cycle: true,
            }],
        })
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    fn call_index(&self, req: &GenerationRequest, sha: &str) -> u64 {
        if let Some(i) = req.seed_hint {
            return i;
        }
        let mut counters = self.counters.lock().expect("mock counter lock poisoned");
        let slot = counters.entry(sha.to_string()).or_insert(0);
        let i = *slot;
        *slot += 1;
        i
    }

    /// Synchronous core of [`Generator::complete`].
    pub fn reply(&self, req: &GenerationRequest) -> Result<GenerationReply> {
        req.validate()?;
        let sha = prompt_sha256(&req.prompt);
        let call_index = self.call_index(req, &sha);
        let exhausted = || EngineError::ScriptExhausted {
            prompt_sha256: sha.clone(),
            call_index,
        };
        let entry = self
            .script
            .entries
            .iter()
            .find(|e| e.matcher.matches(&req.prompt, &sha))
            .ok_or_else(exhausted)?;
        if entry.replies.is_empty() {
            return Err(exhausted());
        }
        let n = entry.replies.len() as u64;
        let slot = if entry.cycle {
            call_index % n
        } else if call_index < n {
            call_index
        } else {
            return Err(exhausted());
        };
        match &entry.replies[slot as usize] {
            MockReply::Error { error } => Err(EngineError::Scripted(error.clone())),
            MockReply::Text {
                text,
                prompt_tokens,
                completion_tokens,
            } => Ok(GenerationReply {
                text: text.clone(),
                prompt_tokens: prompt_tokens.unwrap_or(word_count(&req.prompt) as u64),
                completion_tokens: completion_tokens.unwrap_or(word_count(text) as u64),
                endpoint_id: self.script.endpoint_id.clone(),
                usage_estimated: false,
                retries: 0,
            }),
        }
    }
}

#[async_trait]
impl Generator for MockGenerator {
    async fn complete(&self, req: &GenerationRequest) -> Result<GenerationReply> {
        self.reply(req)
    }

    fn endpoint_id(&self) -> &str {
        &self.script.endpoint_id
    }
}
