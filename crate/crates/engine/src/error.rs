use thiserror::Error;

/// Errors raised by generators and the data engine.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Core(#[from] mpolab_core::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid generation request: {0}")]
    Request(String),

    /// The mock has no scripted reply for this prompt and call index.
    #[error("mock script exhausted for prompt {prompt_sha256} at call {call_index}")]
    ScriptExhausted { prompt_sha256: String, call_index: u64 },

    /// A failure the mock script was told to produce.
    #[error("scripted failure: {0}")]
    Scripted(String),

    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Http { status: u16, attempts: u32, body: String },

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("malformed response: {0}")]
    Response(String),

    #[error("all {} generation calls for sample {sample_id} failed; first: {}", failures.len(), failures.first().map(String::as_str).unwrap_or("-"))]
    AllCallsFailed { sample_id: String, failures: Vec<String> },

    #[error("duplicate sample id {0:?}")]
    DuplicateSample(String),

    #[error("sample {sample_id}: {message}")]
    Sample { sample_id: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;
