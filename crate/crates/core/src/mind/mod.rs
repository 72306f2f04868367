//! Per-agent cognition: persona, somatic state, plans, perception and the
//! backend-mediated decisions (action choice, planning, speech).

mod cognition;
mod perception;
mod plan;
mod somatic;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::action::{ActionKind, ActionTarget};
use crate::memory::{MemoryError, MemoryStore};
use crate::world::{EntityId, EntityPose, Phase, Point};

pub use cognition::{
    adapt_plan, choose_action, compose_utterance, formulate_goals, rate_importance, request_from_call, system_text,
    world_context, ActionChoice, MindError, MindSettings, Utterance,
};
pub use perception::perceive;
pub use plan::{parse_plan, Plan, PlanError, PlanStep, PlanText, MAX_PLAN_STEPS, MIN_PLAN_STEPS};
pub use somatic::{tiredness_rate, update_somatic, SomaticState, TirednessBucket};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub disposition: String,
    pub speech_style: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConversationId(pub u64);

impl fmt::Display for ConversationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The action an agent is currently carrying out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub kind: ActionKind,
    pub target: Option<ActionTarget>,
    pub started: u64,
    /// Where a movement action is heading.
    pub destination: Option<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub persona: Persona,
    pub pose: EntityPose,
    pub somatic: SomaticState,
    pub memory: MemoryStore,
    pub plan: Option<Plan>,
    pub busy_until: u64,
    pub conversation: Option<ConversationId>,
    pub activity: Option<Activity>,
    /// Phase and neighbours as of the last perception, for change detection.
    pub perceived_phase: Option<Phase>,
    pub perceived_nearby: Option<Vec<EntityId>>,
    /// Set once the agent has had its first turn.
    pub activated: bool,
    /// No automatic reflection before this tick (set after a failed attempt).
    pub reflection_retry_at: u64,
}

impl AgentState {
    pub fn new(persona: Persona, position: Point, memory_dimension: usize) -> Result<Self, MemoryError> {
        let pose = EntityPose::new(persona.name.as_str(), position);
        Ok(Self {
            persona,
            pose,
            somatic: SomaticState::default(),
            memory: MemoryStore::new(memory_dimension)?,
            plan: None,
            busy_until: 0,
            conversation: None,
            activity: None,
            perceived_phase: None,
            perceived_nearby: None,
            activated: false,
            reflection_retry_at: 0,
        })
    }

    pub fn id(&self) -> &EntityId {
        &self.pose.entity_id
    }

    /// Busy while an action is executing or a conversation is open.
    pub fn is_busy(&self, now: u64) -> bool {
        self.busy_until > now || self.conversation.is_some()
    }

    pub fn has_active_plan(&self) -> bool {
        self.plan.as_ref().is_some_and(Plan::is_active)
    }
}
