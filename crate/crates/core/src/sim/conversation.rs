use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::Turn;
use crate::mind::ConversationId;
use crate::world::EntityId;

pub const DEFAULT_MAX_TURNS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseReason {
    EndMarker,
    MaxTurns,
    BackendFailures,
    NoReply,
}

impl CloseReason {
    pub fn as_str(self) -> &'static str {
        match self {
            CloseReason::EndMarker => "end_marker",
            CloseReason::MaxTurns => "max_turns",
            CloseReason::BackendFailures => "backend_failures",
            CloseReason::NoReply => "no_reply",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversationState {
    Open,
    Closed(CloseReason),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConversationError {
    #[error("a conversation needs two different participants")]
    SameParticipant,
    #[error("max_turns must be positive")]
    ZeroTurns,
    #[error("conversation is closed")]
    Closed,
    #[error("it is {expected}'s turn, not {got}'s")]
    OutOfTurn { expected: EntityId, got: EntityId },
}

/// Two-party exchange with strict alternation. The initiator speaks first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: ConversationId,
    participants: [EntityId; 2],
    turns: Vec<Turn>,
    state: ConversationState,
    max_turns: usize,
    /// Consecutive failed turns by agent speakers.
    pub failures: u32,
    pub opened_at: u64,
}

impl Conversation {
    pub fn open(
        id: ConversationId,
        initiator: EntityId,
        partner: EntityId,
        max_turns: usize,
        tick: u64,
    ) -> Result<Self, ConversationError> {
        if initiator == partner {
            return Err(ConversationError::SameParticipant);
        }
        if max_turns == 0 {
            return Err(ConversationError::ZeroTurns);
        }
        Ok(Self {
            id,
            participants: [initiator, partner],
            turns: Vec::new(),
            state: ConversationState::Open,
            max_turns,
            failures: 0,
            opened_at: tick,
        })
    }

    pub fn participants(&self) -> &[EntityId; 2] {
        &self.participants
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn state(&self) -> ConversationState {
        self.state
    }

    pub fn max_turns(&self) -> usize {
        self.max_turns
    }

    pub fn is_open(&self) -> bool {
        self.state == ConversationState::Open
    }

    pub fn next_speaker(&self) -> &EntityId {
        &self.participants[self.turns.len() % 2]
    }

    pub fn partner_of(&self, id: &EntityId) -> Option<&EntityId> {
        match &self.participants {
            [a, b] if a == id => Some(b),
            [a, b] if b == id => Some(a),
            _ => None,
        }
    }

    /// Tick of the latest turn, or the opening tick.
    pub fn last_activity(&self) -> u64 {
        self.turns.last().map_or(self.opened_at, |t| t.tick)
    }

    /// Records a turn; reaching `max_turns` closes the conversation.
    pub fn add_turn(&mut self, speaker: &EntityId, text: String, tick: u64) -> Result<(), ConversationError> {
        if !self.is_open() {
            return Err(ConversationError::Closed);
        }
        if speaker != self.next_speaker() {
            return Err(ConversationError::OutOfTurn {
                expected: self.next_speaker().clone(),
                got: speaker.clone(),
            });
        }
        self.turns.push(Turn {
            speaker: speaker.clone(),
            text,
            tick,
        });
        self.failures = 0;
        if self.turns.len() >= self.max_turns {
            self.state = ConversationState::Closed(CloseReason::MaxTurns);
        }
        Ok(())
    }

    pub fn close(&mut self, reason: CloseReason) {
        if self.is_open() {
            self.state = ConversationState::Closed(reason);
        }
    }
}
