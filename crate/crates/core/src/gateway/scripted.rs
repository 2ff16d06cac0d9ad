use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde_json::{json, Value};

use super::{ChatBackend, ChatMessage, ChatRequest, ChatResponse, Decoding};
use crate::error::GatewayError;

/// Canonical fixture key of a request: compact JSON with sorted keys over the
/// messages (whitespace-normalized content) and the decoding settings.
pub fn canonical_key(messages: &[ChatMessage], decoding: &Decoding) -> String {
    let messages: Vec<Value> = messages
        .iter()
        .map(|m| {
            json!({
                "role": m.role,
                "content": m.content.split_whitespace().collect::<Vec<_>>().join(" "),
            })
        })
        .collect();
    // serde_json's default map is ordered by key
    let value = json!({
        "decoding": serde_json::to_value(decoding).expect("decoding serializes"),
        "messages": messages,
    });
    value.to_string()
}

/// Replays canned replies. Unknown requests fail with
/// [`GatewayError::MissingFixture`]. Every request is appended to a call log.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: HashMap<String, ChatResponse>,
    calls: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a fixture map `{canonical_key: {text, token_logprobs}}`.
    pub fn from_json(json: &str) -> Result<Self, GatewayError> {
        let replies: HashMap<String, ChatResponse> = serde_json::from_str(json)
            .map_err(|e| GatewayError::Protocol(format!("fixture file: {e}")))?;
        Ok(ScriptedBackend {
            replies,
            calls: Mutex::new(Vec::new()),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Protocol(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn insert(&mut self, messages: &[ChatMessage], decoding: &Decoding, reply: ChatResponse) {
        self.replies.insert(canonical_key(messages, decoding), reply);
    }

    pub fn insert_request(&mut self, request: &ChatRequest, reply: ChatResponse) {
        self.insert(&request.messages, &request.decoding, reply);
    }

    pub fn to_json(&self) -> String {
        let sorted: std::collections::BTreeMap<_, _> = self.replies.iter().collect();
        serde_json::to_string_pretty(&sorted).expect("fixtures serialize")
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().expect("call log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("call log poisoned").len()
    }

    /// Number of logged requests whose system prompt equals `system`.
    pub fn calls_with_system(&self, system: &str) -> usize {
        self.calls
            .lock()
            .expect("call log poisoned")
            .iter()
            .filter(|r| r.messages.first().is_some_and(|m| m.content == system))
            .count()
    }

    pub fn clear_calls(&self) {
        self.calls.lock().expect("call log poisoned").clear();
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.calls
            .lock()
            .expect("call log poisoned")
            .push(request.clone());
        let key = canonical_key(&request.messages, &request.decoding);
        self.replies.get(&key).cloned().ok_or_else(|| {
            let mut shown: String = key.chars().take(160).collect();
            if shown.len() < key.len() {
                shown.push('…');
            }
            GatewayError::MissingFixture(shown)
        })
    }
}
