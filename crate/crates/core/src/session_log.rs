//! Append-only session log.
//!
//! Each line is one JSON object with the keys `actor`, `category`,
//! `payload`, `seq` and `tick`. Keys are written in sorted order at every
//! level and non-integer numbers always carry six decimals, so two equal
//! sessions produce byte-identical files.
//!
//! | category        | required payload fields                         |
//! |-----------------|-------------------------------------------------|
//! | `speech`        | `text` (string)                                 |
//! | `contemplation` | `kind` (string), `text` (string)                |
//! | `planning`      | `kind` (string), `goal` (string), `steps` (array) |
//! | `action`        | `action` (catalogue name), `duration` (integer) |
//! | `event`         | `kind` (string)                                 |
//! | `error`         | `code` (string), `message` (string)             |

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::action::ActionKind;

pub const WORLD_ACTOR: &str = "world";
pub const PARTICIPANT_ACTOR: &str = "participant";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Speech,
    Contemplation,
    Planning,
    Action,
    Event,
    Error,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Speech,
        Category::Contemplation,
        Category::Planning,
        Category::Action,
        Category::Event,
        Category::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Speech => "speech",
            Category::Contemplation => "contemplation",
            Category::Planning => "planning",
            Category::Action => "action",
            Category::Event => "event",
            Category::Error => "error",
        }
    }

    fn required(self) -> &'static [(&'static str, FieldType)] {
        use FieldType::*;
        match self {
            Category::Speech => &[("text", Str)],
            Category::Contemplation => &[("kind", Str), ("text", Str)],
            Category::Planning => &[("kind", Str), ("goal", Str), ("steps", Array)],
            Category::Action => &[("action", Str), ("duration", Integer)],
            Category::Event => &[("kind", Str)],
            Category::Error => &[("code", Str), ("message", Str)],
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category '{s}'"))
    }
}

#[derive(Debug, Clone, Copy)]
enum FieldType {
    Str,
    Integer,
    Array,
}

impl FieldType {
    fn matches(self, v: &Value) -> bool {
        match self {
            FieldType::Str => v.is_string(),
            FieldType::Integer => v.is_u64() || v.is_i64(),
            FieldType::Array => v.is_array(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            FieldType::Str => "a string",
            FieldType::Integer => "an integer",
            FieldType::Array => "an array",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub tick: u64,
    pub actor: String,
    pub category: Category,
    pub payload: Map<String, Value>,
}

impl LogEntry {
    /// The canonical single-line rendering, without a trailing newline.
    pub fn to_line(&self) -> String {
        let mut obj = Map::new();
        obj.insert("actor".into(), Value::String(self.actor.clone()));
        obj.insert("category".into(), Value::String(self.category.as_str().into()));
        obj.insert("payload".into(), Value::Object(self.payload.clone()));
        obj.insert("seq".into(), Value::from(self.seq));
        obj.insert("tick".into(), Value::from(self.tick));
        canonical_json(&Value::Object(obj))
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let obj = v.as_object().ok_or("line is not a JSON object")?;
        let field = |k: &str| obj.get(k).ok_or_else(|| format!("missing '{k}'"));
        let seq = field("seq")?.as_u64().ok_or("'seq' is not an unsigned integer")?;
        let tick = field("tick")?.as_u64().ok_or("'tick' is not an unsigned integer")?;
        let actor = field("actor")?.as_str().ok_or("'actor' is not a string")?.to_owned();
        let category: Category = field("category")?.as_str().ok_or("'category' is not a string")?.parse()?;
        let payload = field("payload")?.as_object().ok_or("'payload' is not an object")?.clone();
        if let Some(extra) = obj.keys().find(|k| !["actor", "category", "payload", "seq", "tick"].contains(&k.as_str())) {
            return Err(format!("unexpected field '{extra}'"));
        }
        Ok(Self {
            seq,
            tick,
            actor,
            category,
            payload,
        })
    }
}

/// Renders `v` with sorted keys and six-decimal floats.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else {
                let f = n.as_f64().unwrap_or(0.0);
                // -0.0 and 0.0 must render the same
                let f = if f == 0.0 { 0.0 } else { f };
                let _ = write!(out, "{f:.6}");
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(a) => {
            out.push('[');
            for (i, item) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&m[k], out);
            }
            out.push('}');
        }
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("expected seq {expected}, got {got}")]
    SeqGap { expected: u64, got: u64 },
    #[error("{category} payload: {message}")]
    Schema { category: Category, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Checks a payload against its category's required fields.
pub fn validate_payload(category: Category, payload: &Map<String, Value>) -> Result<(), LogError> {
    for (name, ty) in category.required() {
        match payload.get(*name) {
            None => {
                return Err(LogError::Schema {
                    category,
                    message: format!("missing '{name}'"),
                })
            }
            Some(v) if !ty.matches(v) => {
                return Err(LogError::Schema {
                    category,
                    message: format!("'{name}' must be {}", ty.name()),
                })
            }
            _ => {}
        }
    }
    if category == Category::Action {
        let name = payload["action"].as_str().unwrap_or_default();
        if ActionKind::from_name(name).is_err() {
            return Err(LogError::Schema {
                category,
                message: format!("'{name}' is not a catalogue action"),
            });
        }
    }
    Ok(())
}

pub trait LogSink: Send {
    fn write_line(&mut self, line: &str) -> io::Result<()>;
    fn flush(&mut self) -> io::Result<()>;
}

pub struct FileSink(BufWriter<File>);

impl FileSink {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(Self(BufWriter::new(File::create(path)?)))
    }
}

impl LogSink for FileSink {
    fn write_line(&mut self, line: &str) -> io::Result<()> {
        self.0.write_all(line.as_bytes())?;
        self.0.write_all(b"\n")
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()
    }
}

/// Keeps lines in memory; clones share the same buffer.
#[derive(Debug, Clone, Default)]
pub struct MemorySink(Arc<Mutex<Vec<String>>>);

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lines(&self) -> Vec<String> {
        self.0.lock().map(|v| v.clone()).unwrap_or_default()
    }
}

impl LogSink for MemorySink {
    fn write_line(&mut self, line: &str) -> io::Result<()> {
        self.0
            .lock()
            .map_err(|_| io::Error::other("memory sink poisoned"))?
            .push(line.to_owned());
        Ok(())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// The writer side of the log: assigns seqs, validates and fans out lines.
pub struct SessionLog {
    next_seq: u64,
    sinks: Vec<Box<dyn LogSink>>,
    counts: BTreeMap<Category, u64>,
}

impl Default for SessionLog {
    fn default() -> Self {
        Self::new()
    }
}

impl SessionLog {
    pub fn new() -> Self {
        Self {
            next_seq: 1,
            sinks: Vec::new(),
            counts: BTreeMap::new(),
        }
    }

    pub fn add_sink(&mut self, sink: impl LogSink + 'static) {
        self.sinks.push(Box::new(sink));
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn count(&self, category: Category) -> u64 {
        self.counts.get(&category).copied().unwrap_or(0)
    }

    /// Appends a fully formed entry. Its seq must be the next one.
    pub fn append(&mut self, entry: &LogEntry) -> Result<(), LogError> {
        if entry.seq != self.next_seq {
            return Err(LogError::SeqGap {
                expected: self.next_seq,
                got: entry.seq,
            });
        }
        validate_payload(entry.category, &entry.payload)?;
        let line = entry.to_line();
        for sink in &mut self.sinks {
            sink.write_line(&line)?;
        }
        self.next_seq += 1;
        *self.counts.entry(entry.category).or_default() += 1;
        Ok(())
    }

    /// Appends with the next seq. A payload that fails its schema is replaced
    /// by an error entry describing the violation.
    pub fn record(
        &mut self,
        tick: u64,
        actor: &str,
        category: Category,
        payload: Map<String, Value>,
    ) -> Result<LogEntry, LogError> {
        let mut entry = LogEntry {
            seq: self.next_seq,
            tick,
            actor: actor.to_owned(),
            category,
            payload,
        };
        if let Err(LogError::Schema { category, message }) = validate_payload(entry.category, &entry.payload) {
            entry.category = Category::Error;
            entry.payload = error_payload("schema_violation", &format!("{category} payload: {message}"));
        }
        self.append(&entry)?;
        Ok(entry)
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        for sink in &mut self.sinks {
            sink.flush()?;
        }
        Ok(())
    }
}

pub fn error_payload(code: &str, message: &str) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("code".into(), Value::String(code.to_owned()));
    m.insert("message".into(), Value::String(message.to_owned()));
    m
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogSummary {
    pub entries: u64,
    pub categories: BTreeMap<String, u64>,
    pub actors: BTreeMap<String, u64>,
    pub actions: BTreeMap<String, u64>,
}

impl Default for LogSummary {
    fn default() -> Self {
        Self {
            entries: 0,
            categories: Category::ALL.iter().map(|c| (c.as_str().to_owned(), 0)).collect(),
            actors: BTreeMap::new(),
            actions: BTreeMap::new(),
        }
    }
}

impl LogSummary {
    pub fn add(&mut self, entry: &LogEntry) {
        self.entries += 1;
        *self.categories.entry(entry.category.as_str().to_owned()).or_default() += 1;
        *self.actors.entry(entry.actor.clone()).or_default() += 1;
        if entry.category == Category::Action {
            if let Some(a) = entry.payload.get("action").and_then(Value::as_str) {
                *self.actions.entry(a.to_owned()).or_default() += 1;
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Counts entries per category, actor and action kind. Blank lines are
/// skipped; any other unparsable line is an error naming its line number.
pub fn summarize(reader: impl BufRead) -> Result<LogSummary, SummaryError> {
    let mut summary = LogSummary::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = LogEntry::parse_line(&line).map_err(|message| SummaryError::Malformed { line: i + 1, message })?;
        summary.add(&entry);
    }
    Ok(summary)
}

pub fn summarize_file(path: impl AsRef<Path>) -> Result<LogSummary, SummaryError> {
    summarize(io::BufReader::new(File::open(path)?))
}
