use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{ModelReply, RawToolCall};
use crate::action::ActionKind;
use crate::world::{EntityId, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    Text,
    Integer,
    Number,
    /// `{"x": .., "y": ..}` or `[x, y]`.
    Coordinates,
    /// Name of an agent or participant.
    Entity,
}

impl ParamType {
    fn as_str(self) -> &'static str {
        match self {
            ParamType::Text => "text",
            ParamType::Integer => "integer",
            ParamType::Number => "number",
            ParamType::Coordinates => "coordinates",
            ParamType::Entity => "entity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub ty: ParamType,
    pub required: bool,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ParamSpec>,
}

impl ToolDescriptor {
    /// One-line rendering used in prompts and for token estimation.
    pub fn signature(&self) -> String {
        let params: Vec<String> = self
            .parameters
            .iter()
            .map(|p| format!("{}{}: {}", p.name, if p.required { "" } else { "?" }, p.ty.as_str()))
            .collect();
        format!("{}({}) - {}", self.name, params.join(", "), self.description)
    }

    /// JSON-schema object for function-calling APIs.
    pub fn json_schema(&self) -> Value {
        let mut properties = serde_json::Map::new();
        for p in &self.parameters {
            let schema = match p.ty {
                ParamType::Text | ParamType::Entity => json!({"type": "string", "description": p.description}),
                ParamType::Integer => json!({"type": "integer", "description": p.description}),
                ParamType::Number => json!({"type": "number", "description": p.description}),
                ParamType::Coordinates => json!({
                    "type": "object",
                    "description": p.description,
                    "properties": {"x": {"type": "number"}, "y": {"type": "number"}},
                    "required": ["x", "y"],
                }),
            };
            properties.insert(p.name.clone(), schema);
        }
        let required: Vec<&str> = self
            .parameters
            .iter()
            .filter(|p| p.required)
            .map(|p| p.name.as_str())
            .collect();
        json!({"type": "object", "properties": properties, "required": required})
    }
}

/// Tool descriptors with unique names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCatalogue {
    tools: Vec<ToolDescriptor>,
}

impl ToolCatalogue {
    pub fn new(tools: Vec<ToolDescriptor>) -> Result<Self, ToolCallError> {
        let mut seen = BTreeSet::new();
        for t in &tools {
            if !seen.insert(t.name.as_str()) {
                return Err(ToolCallError::DuplicateTool { name: t.name.clone() });
            }
        }
        Ok(Self { tools })
    }

    pub fn tools(&self) -> &[ToolDescriptor] {
        &self.tools
    }

    pub fn get(&self, name: &str) -> Option<&ToolDescriptor> {
        self.tools.iter().find(|t| t.name == name)
    }
}

fn param(name: &str, ty: ParamType, required: bool, description: &str) -> ParamSpec {
    ParamSpec {
        name: name.to_owned(),
        ty,
        required,
        description: description.to_owned(),
    }
}

/// The fourteen actions as callable tools.
pub fn action_catalogue() -> ToolCatalogue {
    let tools = ActionKind::ALL
        .iter()
        .map(|&kind| {
            let parameters = match kind {
                ActionKind::TalkTo => vec![param("target", ParamType::Entity, true, "who to talk to")],
                ActionKind::GoTo => vec![param("target", ParamType::Coordinates, true, "where to walk")],
                ActionKind::PileUpSand => {
                    vec![param("target", ParamType::Coordinates, false, "where to heap the sand")]
                }
                _ => Vec::new(),
            };
            ToolDescriptor {
                name: kind.name().to_owned(),
                description: kind.description().to_owned(),
                parameters,
            }
        })
        .collect();
    ToolCatalogue::new(tools).expect("action names are unique")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgValue {
    Text(String),
    Integer(i64),
    Number(f64),
    Coordinates(Point),
    Entity(EntityId),
}

/// A tool call whose name is in the catalogue and whose arguments match the
/// tool's parameter schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: BTreeMap<String, ArgValue>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ToolCallError {
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("reply contains no tool call")]
    NoToolCall,
    #[error("unknown_tool: '{name}'")]
    UnknownTool { name: String },
    #[error("missing_argument: '{tool}' requires '{argument}'")]
    MissingArgument { tool: String, argument: String },
    #[error("invalid_argument: '{tool}.{argument}' must be {expected}")]
    InvalidArgument {
        tool: String,
        argument: String,
        expected: &'static str,
    },
    #[error("unexpected_argument: '{tool}' takes no '{argument}'")]
    UnexpectedArgument { tool: String, argument: String },
    #[error("duplicate tool name '{name}' in catalogue")]
    DuplicateTool { name: String },
}

impl ToolCallError {
    pub fn code(&self) -> &'static str {
        match self {
            ToolCallError::Malformed(_) => "malformed",
            ToolCallError::NoToolCall => "no_tool_call",
            ToolCallError::UnknownTool { .. } => "unknown_tool",
            ToolCallError::MissingArgument { .. } => "missing_argument",
            ToolCallError::InvalidArgument { .. } => "invalid_argument",
            ToolCallError::UnexpectedArgument { .. } => "unexpected_argument",
            ToolCallError::DuplicateTool { .. } => "duplicate_tool",
        }
    }
}

fn finite(v: &Value) -> Option<f64> {
    v.as_f64().filter(|f| f.is_finite())
}

fn coerce(ty: ParamType, v: &Value) -> Option<ArgValue> {
    match ty {
        ParamType::Text => v.as_str().map(|s| ArgValue::Text(s.to_owned())),
        ParamType::Entity => v
            .as_str()
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| ArgValue::Entity(EntityId::new(s))),
        ParamType::Integer => v.as_i64().map(ArgValue::Integer),
        ParamType::Number => finite(v).map(ArgValue::Number),
        ParamType::Coordinates => {
            let (x, y) = match v {
                Value::Object(m) if m.len() == 2 => (m.get("x")?, m.get("y")?),
                Value::Array(a) if a.len() == 2 => (&a[0], &a[1]),
                _ => return None,
            };
            Some(ArgValue::Coordinates(Point::new(finite(x)?, finite(y)?)))
        }
    }
}

fn validate_call(call: &RawToolCall, catalogue: &ToolCatalogue) -> Result<ToolCall, ToolCallError> {
    let tool = catalogue
        .get(&call.name)
        .ok_or_else(|| ToolCallError::UnknownTool { name: call.name.clone() })?;
    if let Some(extra) = call
        .arguments
        .keys()
        .find(|k| !tool.parameters.iter().any(|p| &p.name == *k))
    {
        return Err(ToolCallError::UnexpectedArgument {
            tool: tool.name.clone(),
            argument: extra.clone(),
        });
    }
    let mut arguments = BTreeMap::new();
    for p in &tool.parameters {
        match call.arguments.get(&p.name) {
            None | Some(Value::Null) if p.required => {
                return Err(ToolCallError::MissingArgument {
                    tool: tool.name.clone(),
                    argument: p.name.clone(),
                })
            }
            None | Some(Value::Null) => {}
            Some(v) => {
                let value = coerce(p.ty, v).ok_or_else(|| ToolCallError::InvalidArgument {
                    tool: tool.name.clone(),
                    argument: p.name.clone(),
                    expected: p.ty.as_str(),
                })?;
                arguments.insert(p.name.clone(), value);
            }
        }
    }
    Ok(ToolCall {
        name: tool.name.clone(),
        arguments,
    })
}

/// Validates every call in a structured reply against `catalogue`.
pub fn validate_tool_calls(reply: &ModelReply, catalogue: &ToolCatalogue) -> Result<Vec<ToolCall>, ToolCallError> {
    match reply {
        ModelReply::Text(_) => Err(ToolCallError::NoToolCall),
        ModelReply::ToolCalls(calls) if calls.is_empty() => Err(ToolCallError::NoToolCall),
        ModelReply::ToolCalls(calls) => calls.iter().map(|c| validate_call(c, catalogue)).collect(),
    }
}

/// Parses a raw JSON reply and validates its tool calls. Never panics.
pub fn parse_tool_calls(raw: &str, catalogue: &ToolCatalogue) -> Result<Vec<ToolCall>, ToolCallError> {
    let reply: ModelReply = serde_json::from_str(raw).map_err(|e| ToolCallError::Malformed(e.to_string()))?;
    validate_tool_calls(&reply, catalogue)
}
