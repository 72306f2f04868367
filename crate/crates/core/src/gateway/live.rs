//! HTTP backend for OpenAI-compatible chat-completion endpoints.
//!
//! Configuration comes from the environment: `LLMSCAPE_API_URL` (the full
//! chat-completions URL), `LLMSCAPE_API_KEY` (bearer token, optional for local
//! servers) and `LLMSCAPE_MODEL`.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, CompletionRequest, ModelReply, PromptContext, RawToolCall};
use crate::world::EntityId;

pub const ENV_API_URL: &str = "LLMSCAPE_API_URL";
pub const ENV_API_KEY: &str = "LLMSCAPE_API_KEY";
pub const ENV_MODEL: &str = "LLMSCAPE_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    /// Delay before each retry; its length is the retry count.
    pub backoff: Vec<Duration>,
}

impl LiveConfig {
    pub const DEFAULT_MODEL: &'static str = "gpt-4o";

    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            model: Self::DEFAULT_MODEL.to_owned(),
            timeout: Duration::from_secs(30),
            backoff: vec![Duration::from_secs(1), Duration::from_secs(2)],
        }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        let url = std::env::var(ENV_API_URL)
            .map_err(|_| BackendError::Unconfigured(format!("{ENV_API_URL} is not set")))?;
        let mut config = Self::new(url);
        config.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        if let Ok(model) = std::env::var(ENV_MODEL) {
            if !model.is_empty() {
                config.model = model;
            }
        }
        Ok(config)
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    http: ureq::Agent,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Self {
        let http = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, http }
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    fn request_body(&self, agent: &EntityId, ctx: &PromptContext) -> Value {
        let mut messages = vec![json!({"role": "system", "content": ctx.system_message()})];
        for turn in &ctx.conversation_history {
            if &turn.speaker == agent {
                messages.push(json!({"role": "assistant", "content": turn.text}));
            } else {
                messages.push(json!({"role": "user", "content": turn.line()}));
            }
        }
        let instruction = if ctx.instruction.is_empty() { "Continue." } else { &ctx.instruction };
        messages.push(json!({"role": "user", "content": instruction}));
        let mut body = json!({"model": self.config.model, "messages": messages});
        if !ctx.tool_catalogue.is_empty() {
            let tools: Vec<Value> = ctx
                .tool_catalogue
                .iter()
                .map(|t| {
                    json!({"type": "function", "function": {
                        "name": t.name,
                        "description": t.description,
                        "parameters": t.json_schema(),
                    }})
                })
                .collect();
            body["tools"] = Value::Array(tools);
            body["tool_choice"] = json!("required");
        }
        body
    }

    fn send_once(&self, body: &Value) -> Result<Value, Attempt> {
        let mut req = self.http.post(&self.config.url).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => Attempt::Retry(BackendError::Timeout),
            other => Attempt::Retry(BackendError::Transport(other.to_string())),
        })?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(BackendError::Transport(format!("http status {status}"))));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(BackendError::BadResponse(format!("http status {status}"))));
        }
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| Attempt::Fatal(BackendError::BadResponse(e.to_string())))
    }
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

/// Extracts the first choice of a chat-completions response.
pub(crate) fn reply_from_response(v: &Value) -> Result<ModelReply, BackendError> {
    let message = v
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::BadResponse("no choices[0].message".into()))?;
    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        if !calls.is_empty() {
            let parsed = calls
                .iter()
                .map(|c| {
                    let name = c
                        .pointer("/function/name")
                        .and_then(Value::as_str)
                        .ok_or_else(|| BackendError::BadResponse("tool call without a name".into()))?;
                    let arguments = match c.pointer("/function/arguments") {
                        Some(Value::String(s)) if s.trim().is_empty() => serde_json::Map::new(),
                        Some(Value::String(s)) => serde_json::from_str(s)
                            .map_err(|e| BackendError::BadResponse(format!("arguments of '{name}': {e}")))?,
                        Some(Value::Object(m)) => m.clone(),
                        _ => serde_json::Map::new(),
                    };
                    Ok(RawToolCall {
                        name: name.to_owned(),
                        arguments,
                    })
                })
                .collect::<Result<Vec<_>, BackendError>>()?;
            return Ok(ModelReply::ToolCalls(parsed));
        }
    }
    message
        .get("content")
        .and_then(Value::as_str)
        .map(ModelReply::text)
        .ok_or_else(|| BackendError::BadResponse("message has neither content nor tool calls".into()))
}

impl Backend for LiveBackend {
    fn complete(&mut self, request: CompletionRequest<'_>) -> Result<ModelReply, BackendError> {
        let body = self.request_body(request.agent, request.context);
        let mut attempt = 0;
        loop {
            match self.send_once(&body) {
                Ok(v) => return reply_from_response(&v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    let Some(delay) = self.config.backoff.get(attempt) else {
                        return Err(e);
                    };
                    tracing::warn!(agent = %request.agent, error = %e, "backend call failed, retrying");
                    std::thread::sleep(*delay);
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tool_call_response() {
        let v = json!({"choices": [{"message": {"tool_calls": [
            {"type": "function", "function": {"name": "go_to", "arguments": "{\"target\":{\"x\":1,\"y\":2}}"}}
        ]}}]});
        let r = reply_from_response(&v).unwrap();
        match r {
            ModelReply::ToolCalls(c) => {
                assert_eq!(c[0].name, "go_to");
                assert_eq!(c[0].arguments["target"]["x"], json!(1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parses_text_response() {
        let v = json!({"choices": [{"message": {"content": "hi there", "tool_calls": []}}]});
        assert_eq!(reply_from_response(&v).unwrap(), ModelReply::text("hi there"));
        assert!(reply_from_response(&json!({"choices": []})).is_err());
    }

    #[test]
    fn config_defaults() {
        let c = LiveConfig::new("http://localhost:1/v1/chat/completions");
        assert_eq!(c.timeout, Duration::from_secs(30));
        assert_eq!(c.backoff, vec![Duration::from_secs(1), Duration::from_secs(2)]);
    }
}
