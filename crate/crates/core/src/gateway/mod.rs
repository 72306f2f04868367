//! Model backend abstraction.
//!
//! Every model interaction goes through [`Backend::complete`] with an
//! assembled [`PromptContext`]. Replies are either free text or a list of
//! tool calls; the wire shape is a single-key JSON object:
//!
//! ```json
//! {"text": "I wonder what moved the sand."}
//! {"tool_calls": [{"name": "go_to", "arguments": {"target": {"x": 3, "y": 4}}}]}
//! ```

mod live;
mod prompt;
mod scripted;
mod tools;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::EntityId;

pub use live::{LiveBackend, LiveConfig};
pub use prompt::{assemble_prompt, estimate_tokens, PromptContext, PromptError, PromptMemory, PromptSpec, Turn};
pub use scripted::{CapturedPrompt, PromptCapture, ScriptError, ScriptedBackend};
pub use tools::{
    action_catalogue, parse_tool_calls, validate_tool_calls, ArgValue, ParamSpec, ParamType, ToolCall, ToolCallError,
    ToolCatalogue, ToolDescriptor,
};

/// The literal marker that ends a conversation when present in a reply.
pub const END_MARKER: &str = "[END]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    ChooseAction,
    Reflect,
    FormulateGoals,
    AdaptPlan,
    Speak,
    RateImportance,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::ChooseAction => "choose_action",
            Purpose::Reflect => "reflect",
            Purpose::FormulateGoals => "formulate_goals",
            Purpose::AdaptPlan => "adapt_plan",
            Purpose::Speak => "speak",
            Purpose::RateImportance => "rate_importance",
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A tool call as it arrives from the model, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: serde_json::Map<String, serde_json::Value>,
}

impl RawToolCall {
    pub fn bare(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            arguments: serde_json::Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelReply {
    Text(String),
    ToolCalls(Vec<RawToolCall>),
}

impl ModelReply {
    pub fn text(s: impl Into<String>) -> Self {
        ModelReply::Text(s.into())
    }

    /// The reply a backend gives when it has nothing better to say.
    pub fn default_wait() -> Self {
        ModelReply::ToolCalls(vec![RawToolCall::bare("wait")])
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ModelReply::Text(t) => Some(t),
            ModelReply::ToolCalls(_) => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("unexpected response: {0}")]
    BadResponse(String),
    #[error("backend not configured: {0}")]
    Unconfigured(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
}

/// One model call on behalf of `agent`.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub agent: &'a EntityId,
    pub purpose: Purpose,
    pub context: &'a PromptContext,
}

pub trait Backend: Send {
    fn complete(&mut self, request: CompletionRequest<'_>) -> Result<ModelReply, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&mut self, request: CompletionRequest<'_>) -> Result<ModelReply, BackendError> {
        (**self).complete(request)
    }
}
