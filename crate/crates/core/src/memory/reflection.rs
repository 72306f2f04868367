use thiserror::Error;

use super::{heuristic_importance, HashEmbedder, MemoryError, MemoryKind, MemoryRecord, MemoryStore, Scoring};
use crate::gateway::{assemble_prompt, Backend, BackendError, CompletionRequest, ModelReply, PromptError, PromptSpec, Purpose};
use crate::world::EntityId;

pub const MAX_INSIGHTS: usize = 3;

const INSTRUCTION: &str = "Considering the memories above, what one to three insights can you draw about \
your world? Write each insight on its own line. You may begin a line with its importance from 1 to 10 \
in square brackets, for example: [6] The sand moves when shadows pass.";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionSettings {
    pub threshold: u32,
    /// How many retrieved memories ground the reflection.
    pub top_k: usize,
    /// How many of the newest records form the retrieval query.
    pub recent_window: usize,
    pub scoring: Scoring,
    pub token_budget: usize,
}

impl Default for ReflectionSettings {
    fn default() -> Self {
        Self {
            threshold: 50,
            top_k: 8,
            recent_window: 5,
            scoring: Scoring::default(),
            token_budget: 2048,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReflectionError {
    #[error("reflection not due: accumulator {accumulator} below threshold {threshold}")]
    NotDue { accumulator: u32, threshold: u32 },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("reflection reply unusable: {0}")]
    InvalidReply(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Splits a reply into insight lines with optional `[n]` importance prefixes.
pub fn parse_insights(text: &str) -> Result<Vec<(Option<u8>, String)>, ReflectionError> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut l = line.trim();
        l = l.trim_start_matches(['-', '*', '•']).trim_start();
        if let Some((num, rest)) = l.split_once(". ") {
            if !num.is_empty() && num.chars().all(|c| c.is_ascii_digit()) {
                l = rest.trim_start();
            }
        }
        let mut importance = None;
        if let Some(rest) = l.strip_prefix('[') {
            if let Some((num, tail)) = rest.split_once(']') {
                if let Ok(n) = num.trim().parse::<u8>() {
                    if (1..=10).contains(&n) {
                        importance = Some(n);
                        l = tail.trim_start();
                    }
                }
            }
        }
        if !l.is_empty() {
            out.push((importance, l.to_owned()));
        }
        if out.len() == MAX_INSIGHTS {
            break;
        }
    }
    if out.is_empty() {
        return Err(ReflectionError::InvalidReply("no insight lines".into()));
    }
    Ok(out)
}

/// Reflects only when the importance accumulator has reached the threshold.
pub fn synthesize_reflection(
    store: &mut MemoryStore,
    backend: &mut dyn Backend,
    agent: &EntityId,
    system_text: &str,
    now: u64,
    settings: &ReflectionSettings,
    embedder: &HashEmbedder,
) -> Result<Vec<MemoryRecord>, ReflectionError> {
    if !store.should_reflect(settings.threshold) {
        return Err(ReflectionError::NotDue {
            accumulator: store.importance_accumulator(),
            threshold: settings.threshold,
        });
    }
    reflect(store, backend, agent, system_text, now, settings, embedder)
}

/// Asks the backend for insights grounded in the memories most related to
/// recent experience, appends them as reflection records and resets the
/// accumulator. On any failure the store is left untouched.
pub fn reflect(
    store: &mut MemoryStore,
    backend: &mut dyn Backend,
    agent: &EntityId,
    system_text: &str,
    now: u64,
    settings: &ReflectionSettings,
    embedder: &HashEmbedder,
) -> Result<Vec<MemoryRecord>, ReflectionError> {
    let recent: Vec<&str> = store
        .most_recent(settings.recent_window)
        .iter()
        .map(|r| r.text.as_str())
        .collect();
    let query = embedder.embed(&recent.join(" "));
    let grounding = store.rank(&query, settings.top_k, now, &settings.scoring)?;
    let context = assemble_prompt(PromptSpec {
        system_text: system_text.to_owned(),
        world_context: format!("It is tick {now}."),
        instruction: INSTRUCTION.to_owned(),
        memories: &grounding,
        history: &[],
        tools: &[],
        budget: settings.token_budget,
    })?;
    let reply = backend.complete(CompletionRequest {
        agent,
        purpose: Purpose::Reflect,
        context: &context,
    })?;
    let text = match reply {
        ModelReply::Text(t) => t,
        ModelReply::ToolCalls(_) => return Err(ReflectionError::InvalidReply("expected text, got tool calls".into())),
    };
    let insights = parse_insights(&text)?;

    let mut staged = store.clone();
    let mut created = Vec::with_capacity(insights.len());
    for (importance, text) in insights {
        let importance = importance.unwrap_or_else(|| heuristic_importance(&text, MemoryKind::Reflection));
        let embedding = embedder.embed(&text);
        created.push(staged.record(now, MemoryKind::Reflection, text, importance, embedding)?);
    }
    staged.touch(grounding.iter().map(|m| m.record.id), now);
    staged.reset_accumulator();
    *store = staged;
    Ok(created)
}
