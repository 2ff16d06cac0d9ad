//! Chat-completion abstraction with token log-probabilities.
//!
//! Three backends implement [`ChatBackend`]: [`RemoteBackend`] speaks the
//! chat-completions HTTP protocol, [`ScriptedBackend`] replays canned
//! replies keyed by canonicalized requests, and the synthetic-world oracle
//! in [`crate::synth::OracleBackend`] answers from a knowledge graph.

mod remote;
mod scripted;

pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::{canonical_key, ScriptedBackend};

use serde::{Deserialize, Serialize};

use crate::error::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Decoding {
    Greedy,
    Nucleus {
        top_p: f64,
        temperature: f64,
        /// Distinguishes otherwise identical samples.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

impl Decoding {
    pub fn is_greedy(&self) -> bool {
        matches!(self, Decoding::Greedy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub decoding: Decoding,
    /// `Some(k)` requests per-token log-probabilities with `k` alternatives.
    pub top_logprobs: Option<usize>,
    pub max_tokens: usize,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl ChatRequest {
    pub fn greedy(messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            messages,
            decoding: Decoding::Greedy,
            top_logprobs: None,
            max_tokens: 256,
            stop: Vec::new(),
        }
    }

    pub fn nucleus(messages: Vec<ChatMessage>, top_p: f64, temperature: f64, seed: u64) -> Self {
        ChatRequest {
            decoding: Decoding::Nucleus {
                top_p,
                temperature,
                seed: Some(seed),
            },
            ..ChatRequest::greedy(messages)
        }
    }

    pub fn with_logprobs(mut self, k: usize) -> Self {
        self.top_logprobs = Some(k);
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if let Decoding::Nucleus {
            top_p, temperature, ..
        } = self.decoding
        {
            if !(top_p > 0.0 && top_p <= 1.0) {
                return Err(GatewayError::InvalidRequest(format!(
                    "top_p {top_p} outside (0, 1]"
                )));
            }
            if temperature.is_nan() || temperature <= 0.0 {
                return Err(GatewayError::InvalidRequest(format!(
                    "temperature {temperature} must be positive"
                )));
            }
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens is zero".into()));
        }
        Ok(())
    }

    pub fn wants_logprobs(&self) -> bool {
        self.top_logprobs.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub alternatives: Vec<Alternative>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    /// Alternatives cover the whole vocabulary rather than a top-k slice.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub full_distribution: bool,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ChatResponse {
            text: text.into(),
            token_logprobs: None,
            full_distribution: false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Performs the request without validation.
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let response = self.send(request)?;
        if request.wants_logprobs() && response.token_logprobs.is_none() {
            return Err(GatewayError::UnsupportedLogprobs);
        }
        Ok(response)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).send(request)
    }
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
}

pub const YES_VARIANTS: [&str; 4] = ["Yes", "yes", " Yes", " yes"];
pub const NO_VARIANTS: [&str; 4] = ["No", "no", " No", " no"];

/// Minimum number of alternatives a yes/no judgment asks for.
pub const YES_NO_MIN_ALTERNATIVES: usize = 20;

/// Probability mass of the yes and no continuations of a judgment prompt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YesNo {
    pub p_yes: f64,
    pub p_no: f64,
}

impl YesNo {
    pub fn is_yes(&self) -> bool {
        self.p_yes > self.p_no
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Aggregates the first generated token's alternatives over the casing and
/// leading-space variants of "yes" and "no".
pub fn yes_no_from_first_token(first: &TokenLogprob) -> Result<YesNo, GatewayError> {
    let mut seen: Vec<(&str, f64)> = first
        .alternatives
        .iter()
        .map(|a| (a.token.as_str(), a.logprob))
        .collect();
    if !seen.iter().any(|(t, _)| *t == first.token) {
        seen.push((first.token.as_str(), first.logprob));
    }
    let mass = |variants: &[&str]| {
        let lps: Vec<f64> = seen
            .iter()
            .filter(|(t, _)| variants.contains(t))
            .map(|(_, lp)| *lp)
            .collect();
        if lps.is_empty() {
            None
        } else {
            Some(log_sum_exp(&lps).exp())
        }
    };
    match (mass(&YES_VARIANTS), mass(&NO_VARIANTS)) {
        (None, None) => Err(GatewayError::NeitherTokenFound),
        (yes, no) => Ok(YesNo {
            p_yes: yes.unwrap_or(0.0),
            p_no: no.unwrap_or(0.0),
        }),
    }
}

pub fn yes_no_probability(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
) -> Result<YesNo, GatewayError> {
    match request.top_logprobs {
        Some(k) if k >= YES_NO_MIN_ALTERNATIVES => {}
        other => {
            return Err(GatewayError::InvalidRequest(format!(
                "yes/no judgment needs at least {YES_NO_MIN_ALTERNATIVES} alternatives, got {other:?}"
            )))
        }
    }
    let response = backend.complete(request)?;
    let first = response
        .token_logprobs
        .as_ref()
        .and_then(|t| t.first())
        .ok_or(GatewayError::NeitherTokenFound)?;
    yes_no_from_first_token(first)
}

/// Reads a free-text Yes/No reply.
pub fn reply_is_yes(text: &str) -> bool {
    text.trim_start()
        .get(..3)
        .is_some_and(|head| head.eq_ignore_ascii_case("yes"))
}
