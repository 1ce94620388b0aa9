//! Prompt assembly, MLLM endpoint calls, and grounding validation with
//! sentence-level repair.

mod client;
mod grounding;
mod lexicon;
mod prompt;

pub use client::{
    request_body, request_hash, AuditLog, AuditRecord, EndpointConfig, HttpResponse, HttpTransport, MllmClient,
    RawCompletion, ReqwestTransport, Sleeper, ThreadSleeper, Usage,
};
pub use grounding::{
    repair_or_finalize, validate_grounding, CountCheck, FinalAnnotation, Mention, RejectPolicy, SentenceCheck,
    SideCheck, ValidationReport, Verdict,
};
pub use lexicon::Lexicon;
pub use prompt::{build_prompt, PromptBundle, PromptConfig};

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("prompt needs {needed} words but the budget is {budget}")]
    Budget { needed: usize, budget: usize },
    #[error("window has {found} media references, expected {expected}")]
    Media { expected: usize, found: usize },
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimit { attempts: u32, retry_after_s: Option<f64> },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("{0}")]
    MissingInput(String),
    #[error("orchestrator config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl OrchestratorError {
    pub fn kind(&self) -> &'static str {
        match self {
            OrchestratorError::Budget { .. } => "budget",
            OrchestratorError::Media { .. } => "media",
            OrchestratorError::Transport { .. } => "transport",
            OrchestratorError::Auth(_) => "auth",
            OrchestratorError::RateLimit { .. } => "rate_limit",
            OrchestratorError::Malformed(_) => "malformed_response",
            OrchestratorError::MissingInput(_) => "missing_input",
            OrchestratorError::Config(_) => "config",
            OrchestratorError::Io(_) => "io",
        }
    }
}
