//! Uniform model-completion interface.
//!
//! Every agent call in the pipeline bottoms out in [`Backend::complete`].
//! Two implementations are provided: [`HttpBackend`] speaks the de-facto
//! standard chat-completions endpoint, and [`ScriptedBackend`] replays a
//! [`Playbook`] of canned responses so whole pipeline runs are byte-for-byte
//! reproducible. [`CachingBackend`] wraps either one.

mod cache;
mod http;
mod scripted;

pub use cache::CachingBackend;
pub use http::{HttpBackend, HttpBackendConfig};
pub use scripted::{Playbook, PlaybookEntry, PlaybookError, PromptMatcher, ScriptedBackend};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// The five agent roles a completion request can be issued for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoleTag {
    #[serde(rename = "PA")]
    Planner,
    #[serde(rename = "DAA")]
    DomainAnalyst,
    #[serde(rename = "IEA")]
    InferenceExpert,
    #[serde(rename = "DEA")]
    DomainExpert,
    #[serde(rename = "FEA")]
    FusionExpert,
}

impl RoleTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::Planner => "PA",
            RoleTag::DomainAnalyst => "DAA",
            RoleTag::InferenceExpert => "IEA",
            RoleTag::DomainExpert => "DEA",
            RoleTag::FusionExpert => "FEA",
        }
    }
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoleTag {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PA" => Ok(RoleTag::Planner),
            "DAA" => Ok(RoleTag::DomainAnalyst),
            "IEA" => Ok(RoleTag::InferenceExpert),
            "DEA" => Ok(RoleTag::DomainExpert),
            "FEA" => Ok(RoleTag::FusionExpert),
            other => Err(BackendError::InvalidRequest(format!(
                "unknown role tag {other:?}"
            ))),
        }
    }
}

/// One model call. Prompts must be non-empty and temperature within [0, 2].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub role_tag: RoleTag,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub model_id: String,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.system_prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest(
                "system prompt is empty".into(),
            ));
        }
        if self.user_prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("user prompt is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Where a response came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSource {
    Live,
    Scripted,
    Cache,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
    pub source: ResponseSource,
}

/// One attempt against the live endpoint, kept for the error report when the
/// retry budget is exhausted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttemptLog {
    pub attempt: u32,
    pub outcome: String,
    pub backoff_ms: u64,
}

#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration error: {0}")]
    Configuration(String),
    #[error("no playbook entry matches role {role_tag} (prompt digest {digest}, excerpt {excerpt:?})")]
    PlaybookMiss {
        role_tag: RoleTag,
        digest: String,
        excerpt: String,
    },
    #[error("scripted fault injected for role {role_tag}")]
    ScriptedFault { role_tag: RoleTag },
    #[error("transport failure after {} attempt(s): {message}", attempts.len())]
    Transport {
        attempts: Vec<AttemptLog>,
        message: String,
    },
    #[error("endpoint rejected request with status {status}: {body}")]
    Api { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),
}

/// Shared completion interface. Implementations are safe to call from
/// multiple threads at once.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }
}

/// Short FNV-1a digest used to identify prompts in diagnostics without
/// dumping their full text.
pub(crate) fn prompt_digest(text: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}
