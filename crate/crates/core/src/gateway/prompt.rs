//! Prompt assembly under a token budget.
//!
//! The system text, world context, instruction and tool list are always
//! included. The remaining budget is filled first with memories in
//! descending retrieval score, then with the most recent conversation turns.
//! Packing stops at the first item that does not fit, so the included
//! memories are always a prefix of the ranking. Items are never truncated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ToolDescriptor;
use crate::memory::{rank_order, ScoredMemory};
use crate::world::EntityId;

/// Token estimate: one token per four characters, rounded up.
///
/// This is an approximation; it is only used to keep prompts within budget.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("token budget {budget} is smaller than the fixed prompt ({required} tokens)")]
    BudgetTooSmall { required: usize, budget: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: EntityId,
    pub text: String,
    pub tick: u64,
}

impl Turn {
    pub fn line(&self) -> String {
        format!("{}: {}", self.speaker, self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMemory {
    pub id: u64,
    pub tick: u64,
    pub text: String,
    pub score: f64,
}

impl PromptMemory {
    pub fn line(&self) -> String {
        format!("- (tick {}) {}", self.tick, self.text)
    }
}

/// Inputs to [`assemble_prompt`].
#[derive(Debug, Clone)]
pub struct PromptSpec<'a> {
    pub system_text: String,
    pub world_context: String,
    pub instruction: String,
    pub memories: &'a [ScoredMemory],
    pub history: &'a [Turn],
    pub tools: &'a [ToolDescriptor],
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub system_text: String,
    pub world_context: String,
    pub instruction: String,
    pub retrieved_memories: Vec<PromptMemory>,
    pub conversation_history: Vec<Turn>,
    pub tool_catalogue: Vec<ToolDescriptor>,
    pub token_budget: usize,
}

impl PromptContext {
    fn fixed_tokens(system: &str, world: &str, instruction: &str, tools: &[ToolDescriptor]) -> usize {
        estimate_tokens(system)
            + estimate_tokens(world)
            + estimate_tokens(instruction)
            + tools.iter().map(|t| estimate_tokens(&t.signature())).sum::<usize>()
    }

    pub fn estimated_tokens(&self) -> usize {
        Self::fixed_tokens(&self.system_text, &self.world_context, &self.instruction, &self.tool_catalogue)
            + self
                .retrieved_memories
                .iter()
                .map(|m| estimate_tokens(&m.line()))
                .sum::<usize>()
            + self
                .conversation_history
                .iter()
                .map(|t| estimate_tokens(&t.line()))
                .sum::<usize>()
    }

    /// System message: persona, world framing, memories and tool list.
    pub fn system_message(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.system_text);
        out.push_str("\n\nWhat you can perceive right now:\n");
        out.push_str(&self.world_context);
        if !self.retrieved_memories.is_empty() {
            out.push_str("\n\nThings you remember:\n");
            for m in &self.retrieved_memories {
                out.push_str(&m.line());
                out.push('\n');
            }
        }
        if !self.tool_catalogue.is_empty() {
            out.push_str("\n\nYou may act by calling exactly one of these tools:\n");
            for t in &self.tool_catalogue {
                out.push_str(&t.signature());
                out.push('\n');
            }
        }
        out
    }

    /// Every piece of text the model would see, concatenated.
    pub fn full_text(&self) -> String {
        let mut out = self.system_message();
        for t in &self.conversation_history {
            out.push_str(&t.line());
            out.push('\n');
        }
        out.push_str(&self.instruction);
        out
    }
}

pub fn assemble_prompt(spec: PromptSpec<'_>) -> Result<PromptContext, PromptError> {
    let fixed = PromptContext::fixed_tokens(&spec.system_text, &spec.world_context, &spec.instruction, spec.tools);
    if fixed > spec.budget {
        return Err(PromptError::BudgetTooSmall {
            required: fixed,
            budget: spec.budget,
        });
    }
    let mut remaining = spec.budget - fixed;

    let mut ranked: Vec<&ScoredMemory> = spec.memories.iter().collect();
    ranked.sort_by(|a, b| rank_order(a.score, &a.record, b.score, &b.record));
    let mut retrieved_memories = Vec::new();
    for m in ranked {
        let item = PromptMemory {
            id: m.record.id,
            tick: m.record.tick,
            text: m.record.text.clone(),
            score: m.score,
        };
        let cost = estimate_tokens(&item.line());
        if cost > remaining {
            break;
        }
        remaining -= cost;
        retrieved_memories.push(item);
    }

    let mut conversation_history = Vec::new();
    for turn in spec.history.iter().rev() {
        let cost = estimate_tokens(&turn.line());
        if cost > remaining {
            break;
        }
        remaining -= cost;
        conversation_history.push(turn.clone());
    }
    conversation_history.reverse();

    Ok(PromptContext {
        system_text: spec.system_text,
        world_context: spec.world_context,
        instruction: spec.instruction,
        retrieved_memories,
        conversation_history,
        tool_catalogue: spec.tools.to_vec(),
        token_budget: spec.budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{MemoryKind, MemoryRecord};

    fn scored(id: u64, score: f64, text: &str) -> ScoredMemory {
        ScoredMemory {
            record: MemoryRecord {
                id,
                tick: id,
                kind: MemoryKind::Observation,
                text: text.into(),
                importance: 3,
                embedding: vec![0.0],
                last_access: id,
            },
            score,
        }
    }

    fn spec<'a>(memories: &'a [ScoredMemory], history: &'a [Turn], budget: usize) -> PromptSpec<'a> {
        PromptSpec {
            system_text: "You are the boy.".into(),
            world_context: "It is dawn.".into(),
            instruction: String::new(),
            memories,
            history,
            tools: &[],
            budget,
        }
    }

    #[test]
    fn estimate_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abc"), 1);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }

    #[test]
    fn huge_budget_includes_everything() {
        let mems: Vec<_> = (1..=5).map(|i| scored(i, i as f64 / 10.0, "a memory")).collect();
        let hist = vec![Turn {
            speaker: "woman".into(),
            text: "hello".into(),
            tick: 3,
        }];
        let ctx = assemble_prompt(spec(&mems, &hist, 100_000)).unwrap();
        assert_eq!(ctx.retrieved_memories.len(), 5);
        assert_eq!(ctx.conversation_history.len(), 1);
        assert_eq!(ctx.retrieved_memories[0].id, 5);
    }

    #[test]
    fn tight_budget_keeps_highest_scored() {
        // Every memory line renders to exactly 5 tokens.
        let mems: Vec<_> = [0.1, 0.9, 0.5, 0.7, 0.3]
            .iter()
            .enumerate()
            .map(|(i, &s)| scored(i as u64 + 1, s, "same length"))
            .collect();
        let line_cost = estimate_tokens(&PromptMemory { id: 1, tick: 1, text: "same length".into(), score: 0.0 }.line());
        let fixed = estimate_tokens("You are the boy.") + estimate_tokens("It is dawn.");
        let ctx = assemble_prompt(spec(&mems, &[], fixed + 2 * line_cost + line_cost - 1)).unwrap();
        let ids: Vec<_> = ctx.retrieved_memories.iter().map(|m| m.id).collect();
        assert_eq!(ids, vec![2, 4]);
        assert!(ctx.estimated_tokens() <= ctx.token_budget);
    }

    #[test]
    fn budget_below_fixed_text_is_an_error() {
        let err = assemble_prompt(spec(&[], &[], 2)).unwrap_err();
        assert!(matches!(err, PromptError::BudgetTooSmall { .. }));
    }

    #[test]
    fn history_keeps_most_recent_in_order() {
        let hist: Vec<_> = (0..4)
            .map(|i| Turn {
                speaker: "boy".into(),
                text: format!("turn {i}"),
                tick: i,
            })
            .collect();
        let per = estimate_tokens(&hist[0].line());
        let fixed = estimate_tokens("You are the boy.") + estimate_tokens("It is dawn.");
        let ctx = assemble_prompt(spec(&[], &hist, fixed + 2 * per)).unwrap();
        let ticks: Vec<_> = ctx.conversation_history.iter().map(|t| t.tick).collect();
        assert_eq!(ticks, vec![2, 3]);
    }
}
