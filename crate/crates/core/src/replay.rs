//! Re-runs a recorded session and checks it line by line.
//!
//! Participant inputs are read back out of the log and re-queued just before
//! the tick that consumed them; everything else is regenerated from the seed
//! and the scenario's script.

use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

use crate::gateway::Backend;
use crate::scenario::Scenario;
use crate::session_log::{Category, LogEntry, LogError, MemorySink, PARTICIPANT_ACTOR};
use crate::sim::{InputError, ParticipantInput, SimError, Simulation};
use crate::world::CellRegion;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("log line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("log does not start with a session_start entry")]
    MissingHeader,
    #[error("recorded input at tick {tick} is unusable: {message}")]
    BadInput { tick: u64, message: String },
    #[error("recorded input at tick {tick} was rejected: {source}")]
    Rejected { tick: u64, source: InputError },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionHeader {
    pub scenario: String,
    pub seed: u64,
    /// Ticks run, when the log was closed cleanly.
    pub ticks: Option<u64>,
    pub digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub seq: u64,
    pub recorded: Option<String>,
    pub replayed: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub header: SessionHeader,
    pub ticks: u64,
    pub lines_compared: usize,
    pub divergence: Option<Divergence>,
    pub replayed_digest: String,
}

impl ReplayReport {
    pub fn digest_matches(&self) -> bool {
        self.header.digest.as_deref() == Some(self.replayed_digest.as_str())
    }

    /// Every line matched and the final digests agree.
    pub fn is_faithful(&self) -> bool {
        self.divergence.is_none() && (self.header.digest.is_none() || self.digest_matches())
    }
}

/// Parses non-blank lines, keeping the original text for comparison.
pub fn parse_log(text: &str) -> Result<Vec<(String, LogEntry)>, ReplayError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            LogEntry::parse_line(l)
                .map(|e| (l.to_owned(), e))
                .map_err(|e| ReplayError::Malformed {
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

pub fn read_header(entries: &[(String, LogEntry)]) -> Result<SessionHeader, ReplayError> {
    let first = entries.first().map(|(_, e)| e).ok_or(ReplayError::MissingHeader)?;
    if first.category != Category::Event || first.payload.get("kind").and_then(Value::as_str) != Some("session_start") {
        return Err(ReplayError::MissingHeader);
    }
    let scenario = first
        .payload
        .get("scenario")
        .and_then(Value::as_str)
        .ok_or(ReplayError::MissingHeader)?
        .to_owned();
    let seed = first.payload.get("seed").and_then(Value::as_u64).ok_or(ReplayError::MissingHeader)?;
    let end = entries
        .iter()
        .rev()
        .map(|(_, e)| e)
        .find(|e| e.category == Category::Event && e.payload.get("kind").and_then(Value::as_str) == Some("session_end"));
    Ok(SessionHeader {
        scenario,
        seed,
        ticks: end.and_then(|e| e.payload.get("ticks")).and_then(Value::as_u64),
        digest: end
            .and_then(|e| e.payload.get("digest"))
            .and_then(Value::as_str)
            .map(str::to_owned),
    })
}

fn bad(tick: u64, message: &str) -> ReplayError {
    ReplayError::BadInput {
        tick,
        message: message.to_owned(),
    }
}

fn input_of(e: &LogEntry) -> Result<Option<ParticipantInput>, ReplayError> {
    let p = &e.payload;
    if e.actor != PARTICIPANT_ACTOR || p.get("origin").and_then(Value::as_str) != Some("participant") {
        return Ok(None);
    }
    let input = match (e.category, p.get("kind").and_then(Value::as_str)) {
        (Category::Speech, _) => ParticipantInput::Utterance {
            speaker: p.get("speaker").and_then(Value::as_str).ok_or_else(|| bad(e.tick, "speaker"))?.to_owned(),
            text: p.get("text").and_then(Value::as_str).ok_or_else(|| bad(e.tick, "text"))?.to_owned(),
            target: p.get("target").and_then(Value::as_str).map(Into::into),
        },
        (Category::Event, Some("terrain_edit")) => {
            let region: CellRegion = p
                .get("region")
                .cloned()
                .and_then(|v| serde_json::from_value(v).ok())
                .ok_or_else(|| bad(e.tick, "region"))?;
            let delta = p.get("delta").and_then(Value::as_f64).ok_or_else(|| bad(e.tick, "delta"))?;
            ParticipantInput::TerrainEdit { region, delta }
        }
        (Category::Event, Some("shadow_input")) => {
            let cells: Vec<(usize, usize)> = p
                .get("cells")
                .cloned()
                .and_then(|v| serde_json::from_value(v).ok())
                .ok_or_else(|| bad(e.tick, "cells"))?;
            ParticipantInput::Shadow { cells }
        }
        _ => return Ok(None),
    };
    Ok(Some(input))
}

/// Participant inputs by the tick that consumed them, in arrival order.
pub fn recorded_inputs(entries: &[(String, LogEntry)]) -> Result<BTreeMap<u64, Vec<ParticipantInput>>, ReplayError> {
    let mut by_tick: BTreeMap<u64, Vec<(u64, ParticipantInput)>> = BTreeMap::new();
    for (_, e) in entries {
        if let Some(input) = input_of(e)? {
            let order = e.payload.get("order").and_then(Value::as_u64).unwrap_or(0);
            by_tick.entry(e.tick).or_default().push((order, input));
        }
    }
    Ok(by_tick
        .into_iter()
        .map(|(t, mut v)| {
            v.sort_by_key(|(o, _)| *o);
            (t, v.into_iter().map(|(_, i)| i).collect())
        })
        .collect())
}

/// Replays `log_text` against `scenario` with the given backend, which must
/// answer exactly as the original did.
pub fn replay(log_text: &str, scenario: &Scenario, backend: Box<dyn Backend>) -> Result<ReplayReport, ReplayError> {
    let entries = parse_log(log_text)?;
    let header = read_header(&entries)?;
    let inputs = recorded_inputs(&entries)?;
    let ticks = header
        .ticks
        .unwrap_or_else(|| entries.iter().map(|(_, e)| e.tick).max().unwrap_or(0));

    let mut sim = Simulation::new(scenario, header.seed, backend)?;
    let sink = MemorySink::default();
    sim.add_log_sink(sink.clone());
    let inbox = sim.inbox();
    sim.start()?;
    for tick in 1..=ticks {
        for input in inputs.get(&tick).into_iter().flatten() {
            inbox
                .enqueue(input.clone())
                .map_err(|source| ReplayError::Rejected { tick, source })?;
        }
        sim.tick()?;
    }
    let replayed_digest = if header.ticks.is_some() {
        sim.finish()?.0
    } else {
        sim.digest()
    };

    let produced = sink.lines();
    let recorded: Vec<&str> = entries.iter().map(|(l, _)| l.as_str()).collect();
    let mut divergence = None;
    for i in 0..recorded.len().max(produced.len()) {
        let (r, p) = (recorded.get(i).copied(), produced.get(i).map(String::as_str));
        if r != p {
            divergence = Some(Divergence {
                seq: i as u64 + 1,
                recorded: r.map(str::to_owned),
                replayed: p.map(str::to_owned),
            });
            break;
        }
    }
    Ok(ReplayReport {
        header,
        ticks,
        lines_compared: recorded.len(),
        divergence,
        replayed_digest,
    })
}

/// Replays with the scenario's own scripted backend.
pub fn replay_scripted(log_text: &str, scenario: &Scenario) -> Result<ReplayReport, ReplayError> {
    let backend = match scenario.script_text().map_err(SimError::from)? {
        Some(text) => crate::gateway::ScriptedBackend::parse(&text).map_err(SimError::from)?,
        None => crate::gateway::ScriptedBackend::new(),
    };
    replay(log_text, scenario, Box::new(backend))
}
