//! Chat transport shared by every model-backed component.
//!
//! [`ChatOracle`] is the single interface the search talks to. Implementations:
//! [`HttpOracle`] for OpenAI-compatible endpoints, [`ScriptedOracle`] for fixed
//! reply queues, [`ReplayOracle`] for recorded transcripts, and the
//! [`RecordingOracle`] / [`MeteredOracle`] wrappers.

mod http;
mod json;
mod scripted;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use http::HttpOracle;
pub use json::{extract_json_block, NoJsonFound};
pub use scripted::{
    read_recording, write_recording, Exchange, FnOracle, RecordingOracle, ReplayOracle, ScriptedOracle,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Exponential backoff: `base * factor^attempt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backoff {
    pub base_ms: u64,
    pub factor: f64,
}

impl Backoff {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_ms as f64 * self.factor.powi(attempt as i32);
        Duration::from_millis(ms.min(u64::MAX as f64) as u64)
    }
}

impl Default for Backoff {
    fn default() -> Self {
        Self { base_ms: 1000, factor: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Retries after the first attempt for transient failures.
    pub retry_budget: u32,
    pub backoff: Backoff,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            max_tokens: 2048,
            retry_budget: 3,
            backoff: Backoff::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("messages must be non-empty")]
    EmptyMessages,
    #[error("retry budget exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("non-retryable HTTP status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("scripted oracle has no reply left (call {0})")]
    ScriptExhausted(usize),
    #[error("replay exhausted after {0} exchanges")]
    ReplayExhausted(usize),
    #[error("replay mismatch at exchange {0}: request differs from recording")]
    ReplayMismatch(usize),
    #[error("no chat oracle configured for this mode")]
    Unavailable,
    #[error("recording io: {0}")]
    Io(#[from] std::io::Error),
    #[error("recording format: {0}")]
    Format(#[from] serde_json::Error),
}

pub trait ChatOracle {
    /// Produces the assistant reply for `messages`.
    fn complete(&mut self, messages: &[Message], params: &GenParams) -> Result<String, OracleError>;

    fn chat(&mut self, messages: &[Message], params: &GenParams) -> Result<String, OracleError> {
        if messages.is_empty() {
            return Err(OracleError::EmptyMessages);
        }
        self.complete(messages, params)
    }
}

impl<T: ChatOracle + ?Sized> ChatOracle for &mut T {
    fn complete(&mut self, messages: &[Message], params: &GenParams) -> Result<String, OracleError> {
        (**self).complete(messages, params)
    }
}

impl<T: ChatOracle + ?Sized> ChatOracle for Box<T> {
    fn complete(&mut self, messages: &[Message], params: &GenParams) -> Result<String, OracleError> {
        (**self).complete(messages, params)
    }
}

/// Oracle for modes that never talk to a model; every call fails.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullOracle;

impl ChatOracle for NullOracle {
    fn complete(&mut self, _: &[Message], _: &GenParams) -> Result<String, OracleError> {
        Err(OracleError::Unavailable)
    }
}

/// Call and character counts for cost reporting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    pub calls: u64,
    pub request_chars: u64,
    pub response_chars: u64,
}

impl CallStats {
    pub fn record(&mut self, messages: &[Message], reply: &str) {
        self.calls += 1;
        self.request_chars += messages.iter().map(|m| m.content.chars().count() as u64).sum::<u64>();
        self.response_chars += reply.chars().count() as u64;
    }
}

/// Counts successful calls and request/response characters.
#[derive(Debug)]
pub struct MeteredOracle<O> {
    inner: O,
    stats: CallStats,
}

impl<O: ChatOracle> MeteredOracle<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, stats: CallStats::default() }
    }

    pub fn with_stats(inner: O, stats: CallStats) -> Self {
        Self { inner, stats }
    }

    pub fn stats(&self) -> &CallStats {
        &self.stats
    }

    pub fn inner_mut(&mut self) -> &mut O {
        &mut self.inner
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: ChatOracle> ChatOracle for MeteredOracle<O> {
    fn complete(&mut self, messages: &[Message], params: &GenParams) -> Result<String, OracleError> {
        let reply = self.inner.chat(messages, params)?;
        self.stats.record(messages, &reply);
        Ok(reply)
    }
}
