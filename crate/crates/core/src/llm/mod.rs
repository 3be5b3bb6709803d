//! Completion backends and usage/cost accounting.

mod cost;
mod http;
mod scripted;

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cost::{CostError, CostLedger, ModelPrice, PriceTable, SharedCostLedger};
pub use http::{HttpBackend, HttpConfig, RetryPolicy, API_BASE_ENV, API_KEY_ENV};
pub use scripted::ScriptedBackend;

/// Stop sequence sent with every completion so the model cannot write its
/// own tool observations.
pub const OBSERVATION_STOP: &str = "Observation:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub stop: Vec<String>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub model: String,
}

impl CompletionRequest {
    /// Temperature 0, 512 output tokens, stopping at `Observation:`.
    pub fn new(prompt: impl Into<String>, model: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            stop: vec![OBSERVATION_STOP.to_string()],
            max_tokens: 512,
            temperature: 0.0,
            model: model.into(),
        }
    }

    pub(crate) fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("temperature must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Usage { input_tokens, output_tokens }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl Add for Usage {
    type Output = Usage;

    fn add(self, rhs: Usage) -> Usage {
        Usage::new(self.input_tokens + rhs.input_tokens, self.output_tokens + rhs.output_tokens)
    }
}

impl AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Usage {
    fn sum<I: Iterator<Item = Usage>>(iter: I) -> Usage {
        iter.fold(Usage::default(), Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// One attempt failed in a way worth retrying (transport, 429, 5xx).
    #[error("attempt {attempt} failed: {message}")]
    Retryable { attempt: u32, message: String },
    #[error("backend failed after {attempts} attempt(s): {message}")]
    Fatal { attempts: u32, message: String },
    #[error("script exhausted after {calls} completion(s)")]
    ScriptExhausted { calls: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Retryable { .. })
    }
}

/// A language model behind a text-completion interface.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}

/// Token estimate for backends with no server-reported usage:
/// ceil(characters / 4).
pub fn approx_token_count(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop<'a>(text: &'a str, stops: &[String]) -> &'a str {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_heuristic() {
        assert_eq!(approx_token_count(""), 0);
        assert_eq!(approx_token_count("abcdefgh"), 2);
        assert_eq!(approx_token_count("abcdefghi"), 3);
        assert_eq!(approx_token_count("ééé"), 1);
    }

    #[test]
    fn stop_truncation() {
        let stops = vec![OBSERVATION_STOP.to_string()];
        assert_eq!(truncate_at_stop("Action: x\nInput: {}\nObservation: fake", &stops), "Action: x\nInput: {}\n");
        assert_eq!(truncate_at_stop("no stop", &stops), "no stop");
    }

    #[test]
    fn request_defaults_and_validation() {
        let req = CompletionRequest::new("hi", "gpt-4-32k");
        assert_eq!(req.stop, ["Observation:"]);
        assert_eq!(req.temperature, 0.0);
        assert!(req.validate().is_ok());
        assert!(CompletionRequest::new("", "m").validate().is_err());
    }
}
