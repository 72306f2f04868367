//! Deterministic backend that replays canned replies keyed by
//! `(agent, step)`.
//!
//! Script files are line-delimited JSON. Each record names the agent, the
//! 1-based call number for that agent, and either a reply or a failure:
//!
//! ```text
//! {"agent": "woman", "step": 1, "reply": {"text": "goal: ..."}}
//! {"agent": "woman", "step": 2, "reply": {"tool_calls": [{"name": "rest"}]}}
//! {"agent": "boy", "step": 1, "error": "timeout"}
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. A step with no record
//! (including every step past the end of the script) yields a `wait` call.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::Deserialize;
use thiserror::Error;

use super::{Backend, BackendError, CompletionRequest, ModelReply, PromptContext, Purpose};
use crate::world::EntityId;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("script line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("script line {line}: step {step} for '{agent}' defined twice")]
    DuplicateStep { line: usize, agent: String, step: u64 },
    #[error("reading script: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
enum Scripted {
    Reply(ModelReply),
    Fail(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    agent: String,
    step: u64,
    #[serde(default)]
    reply: Option<ModelReply>,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapturedPrompt {
    pub agent: EntityId,
    pub purpose: Purpose,
    pub step: u64,
    pub context: PromptContext,
}

/// Shared record of every prompt a [`ScriptedBackend`] has received.
#[derive(Debug, Clone, Default)]
pub struct PromptCapture(Arc<Mutex<Vec<CapturedPrompt>>>);

impl PromptCapture {
    pub fn prompts(&self) -> Vec<CapturedPrompt> {
        self.0.lock().map(|v| v.clone()).unwrap_or_default()
    }

    fn push(&self, p: CapturedPrompt) {
        if let Ok(mut v) = self.0.lock() {
            v.push(p);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    script: BTreeMap<(String, u64), Scripted>,
    counters: BTreeMap<String, u64>,
    capture: Option<PromptCapture>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut backend = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rec: ScriptLine = serde_json::from_str(trimmed).map_err(|e| ScriptError::Parse {
                line,
                message: e.to_string(),
            })?;
            if rec.step == 0 {
                return Err(ScriptError::Parse {
                    line,
                    message: "steps are numbered from 1".into(),
                });
            }
            let entry = match (rec.reply, rec.error) {
                (Some(reply), None) => Scripted::Reply(reply),
                (None, Some(err)) => Scripted::Fail(err),
                _ => {
                    return Err(ScriptError::Parse {
                        line,
                        message: "exactly one of 'reply' or 'error' is required".into(),
                    })
                }
            };
            let key = (rec.agent.clone(), rec.step);
            if backend.script.insert(key, entry).is_some() {
                return Err(ScriptError::DuplicateStep {
                    line,
                    agent: rec.agent,
                    step: rec.step,
                });
            }
        }
        Ok(backend)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    #[must_use]
    pub fn with_reply(mut self, agent: &str, step: u64, reply: ModelReply) -> Self {
        self.script.insert((agent.to_owned(), step), Scripted::Reply(reply));
        self
    }

    #[must_use]
    pub fn with_failure(mut self, agent: &str, step: u64, message: &str) -> Self {
        self.script
            .insert((agent.to_owned(), step), Scripted::Fail(message.to_owned()));
        self
    }

    /// Starts recording prompts; the returned handle sees every later call.
    pub fn capture(&mut self) -> PromptCapture {
        self.capture.get_or_insert_with(PromptCapture::default).clone()
    }

    /// Number of calls served so far for `agent`.
    pub fn step_count(&self, agent: &str) -> u64 {
        self.counters.get(agent).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&mut self, request: CompletionRequest<'_>) -> Result<ModelReply, BackendError> {
        let agent = request.agent.as_str();
        let counter = self.counters.entry(agent.to_owned()).or_insert(0);
        *counter += 1;
        let step = *counter;
        if let Some(capture) = &self.capture {
            capture.push(CapturedPrompt {
                agent: request.agent.clone(),
                purpose: request.purpose,
                step,
                context: request.context.clone(),
            });
        }
        match self.script.get(&(agent.to_owned(), step)) {
            Some(Scripted::Reply(r)) => Ok(r.clone()),
            Some(Scripted::Fail(msg)) => Err(BackendError::Scripted(msg.clone())),
            None => Ok(ModelReply::default_wait()),
        }
    }
}
