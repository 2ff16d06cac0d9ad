use std::time::Duration;

use serde_json::{json, Value};

use super::{Alternative, ChatBackend, ChatRequest, ChatResponse, Decoding, TokenLogprob};
use crate::error::GatewayError;

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL; `/chat/completions` is appended unless already present.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub retry_backoff: Duration,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            retry_backoff: Duration::from_millis(500),
        }
    }

    /// Reads the API key from the named environment variable, if set.
    pub fn with_api_key_env(mut self, var: &str) -> Self {
        self.api_key = std::env::var(var).ok().filter(|k| !k.is_empty());
        self
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Client for an OpenAI-style chat-completions endpoint.
pub struct RemoteBackend {
    config: RemoteConfig,
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(RemoteBackend {
            endpoint: config.endpoint(),
            config,
            client,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn send_once(&self, body: &Value) -> Result<Value, GatewayError> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(GatewayError::Transport(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(GatewayError::Protocol(format!("HTTP {status}: {text}")));
        }
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Protocol(format!("reply is not JSON: {e}")))
    }
}

/// Request body sent on the wire. Greedy decoding maps to temperature 0.
pub fn request_body(model: &str, request: &ChatRequest) -> Value {
    let (temperature, top_p, seed) = match request.decoding {
        Decoding::Greedy => (0.0, 1.0, None),
        Decoding::Nucleus {
            top_p,
            temperature,
            seed,
        } => (temperature, top_p, seed),
    };
    let mut body = json!({
        "model": model,
        "messages": request.messages,
        "temperature": temperature,
        "top_p": top_p,
        "max_tokens": request.max_tokens,
        "logprobs": request.top_logprobs.is_some(),
    });
    let obj = body.as_object_mut().expect("object literal");
    if let Some(k) = request.top_logprobs {
        obj.insert("top_logprobs".into(), json!(k));
    }
    if !request.stop.is_empty() {
        obj.insert("stop".into(), json!(request.stop));
    }
    if let Some(seed) = seed {
        obj.insert("seed".into(), json!(seed));
    }
    body
}

fn protocol(msg: &str) -> GatewayError {
    GatewayError::Protocol(msg.to_string())
}

/// Parses a chat-completions reply body.
pub fn parse_response(body: &Value) -> Result<ChatResponse, GatewayError> {
    let choice = body
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or_else(|| protocol("reply has no choices"))?;
    let text = match choice.pointer("/message/content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(_) => return Err(protocol("message content is not a string")),
    };
    let token_logprobs = match choice.pointer("/logprobs/content") {
        Some(Value::Array(items)) => Some(
            items
                .iter()
                .map(parse_token)
                .collect::<Result<Vec<_>, _>>()?,
        ),
        _ => None,
    };
    Ok(ChatResponse {
        text,
        token_logprobs,
        full_distribution: false,
    })
}

fn parse_token(item: &Value) -> Result<TokenLogprob, GatewayError> {
    let token = item
        .get("token")
        .and_then(Value::as_str)
        .ok_or_else(|| protocol("logprob entry without token"))?;
    let logprob = item
        .get("logprob")
        .and_then(Value::as_f64)
        .ok_or_else(|| protocol("logprob entry without logprob"))?;
    let alternatives = item
        .get("top_logprobs")
        .and_then(Value::as_array)
        .map(|alts| {
            alts.iter()
                .map(|a| {
                    Ok(Alternative {
                        token: a
                            .get("token")
                            .and_then(Value::as_str)
                            .ok_or_else(|| protocol("alternative without token"))?
                            .to_string(),
                        logprob: a
                            .get("logprob")
                            .and_then(Value::as_f64)
                            .ok_or_else(|| protocol("alternative without logprob"))?,
                    })
                })
                .collect::<Result<Vec<_>, GatewayError>>()
        })
        .transpose()?
        .unwrap_or_default();
    Ok(TokenLogprob {
        token: token.to_string(),
        logprob,
        alternatives,
    })
}

impl ChatBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = request_body(&self.config.model, request);
        let mut delay = self.config.retry_backoff;
        let mut attempt = 0;
        loop {
            match self.send_once(&body) {
                Ok(reply) => return parse_response(&reply),
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    attempt += 1;
                    log::warn!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;

    #[test]
    fn greedy_maps_to_zero_temperature() {
        let req = ChatRequest::greedy(vec![ChatMessage::user("q")]).with_logprobs(20);
        let body = request_body("m", &req);
        assert_eq!(body["temperature"], json!(0.0));
        assert_eq!(body["logprobs"], json!(true));
        assert_eq!(body["top_logprobs"], json!(20));
        assert_eq!(body["messages"][0]["role"], json!("user"));
        assert!(body.get("seed").is_none());
    }

    #[test]
    fn nucleus_carries_sampling_params() {
        let req = ChatRequest::nucleus(vec![ChatMessage::user("q")], 0.95, 1.2, 9);
        let body = request_body("m", &req);
        assert_eq!(body["top_p"], json!(0.95));
        assert_eq!(body["temperature"], json!(1.2));
        assert_eq!(body["seed"], json!(9));
        assert_eq!(body["logprobs"], json!(false));
        assert!(body.get("top_logprobs").is_none());
    }

    #[test]
    fn parses_reply_with_logprobs() {
        let body = json!({"choices": [{"message": {"role": "assistant", "content": "Yes"},
            "logprobs": {"content": [{"token": "Yes", "logprob": -0.1,
                "top_logprobs": [{"token": "Yes", "logprob": -0.1}, {"token": "No", "logprob": -2.3}]}]}}]});
        let resp = parse_response(&body).unwrap();
        assert_eq!(resp.text, "Yes");
        let lp = resp.token_logprobs.unwrap();
        assert_eq!(lp[0].alternatives.len(), 2);
        assert!(matches!(parse_response(&json!({"x": 1})), Err(GatewayError::Protocol(_))));
    }

    #[test]
    fn endpoint_suffix() {
        assert_eq!(RemoteConfig::new("http://h/v1/", "m").endpoint(), "http://h/v1/chat/completions");
        assert_eq!(
            RemoteConfig::new("http://h/v1/chat/completions", "m").endpoint(),
            "http://h/v1/chat/completions"
        );
    }
}
