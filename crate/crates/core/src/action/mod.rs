//! The closed catalogue of actions an agent can take, their durations,
//! preconditions and effects.

mod effects;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{EntityId, Point};

pub use effects::{execute_action, ActionEffects, Delegation, ExecutionContext};
pub use validate::{validate_action, ValidationContext, ValidationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    TalkTo,
    PileUpSand,
    Rest,
    Wait,
    Wander,
    GoTo,
    SitDown,
    TakeNap,
    StandUp,
    Dance,
    FormulateGoals,
    AdaptYourPlan,
    SelfReflect,
    Whistle,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("'{0}' is not an action in the catalogue")]
pub struct UnknownAction(pub String);

impl ActionKind {
    pub const ALL: [ActionKind; 14] = [
        ActionKind::TalkTo,
        ActionKind::PileUpSand,
        ActionKind::Rest,
        ActionKind::Wait,
        ActionKind::Wander,
        ActionKind::GoTo,
        ActionKind::SitDown,
        ActionKind::TakeNap,
        ActionKind::StandUp,
        ActionKind::Dance,
        ActionKind::FormulateGoals,
        ActionKind::AdaptYourPlan,
        ActionKind::SelfReflect,
        ActionKind::Whistle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::TalkTo => "talk_to",
            ActionKind::PileUpSand => "pile_up_sand",
            ActionKind::Rest => "rest",
            ActionKind::Wait => "wait",
            ActionKind::Wander => "wander",
            ActionKind::GoTo => "go_to",
            ActionKind::SitDown => "sit_down",
            ActionKind::TakeNap => "take_nap",
            ActionKind::StandUp => "stand_up",
            ActionKind::Dance => "dance",
            ActionKind::FormulateGoals => "formulate_goals",
            ActionKind::AdaptYourPlan => "adapt_your_plan",
            ActionKind::SelfReflect => "self_reflect",
            ActionKind::Whistle => "whistle",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, UnknownAction> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| UnknownAction(name.to_owned()))
    }

    pub fn description(self) -> &'static str {
        match self {
            ActionKind::TalkTo => "Start a conversation with someone nearby.",
            ActionKind::PileUpSand => "Heap up sand at a spot (defaults to where you stand).",
            ActionKind::Rest => "Rest for a while without sleeping.",
            ActionKind::Wait => "Wait a moment and observe.",
            ActionKind::Wander => "Wander off in some direction.",
            ActionKind::GoTo => "Walk to a point on the sand.",
            ActionKind::SitDown => "Sit down.",
            ActionKind::TakeNap => "Lie down and take a nap.",
            ActionKind::StandUp => "Get up from sitting or lying.",
            ActionKind::Dance => "Dance.",
            ActionKind::FormulateGoals => "Think about what you want and make a plan.",
            ActionKind::AdaptYourPlan => "Revise the remaining steps of your plan.",
            ActionKind::SelfReflect => "Reflect on what you have experienced.",
            ActionKind::Whistle => "Whistle loudly enough for others to hear.",
        }
    }

    /// Cognition actions run a backend call instead of a bodily effect.
    pub fn is_cognitive(self) -> bool {
        matches!(
            self,
            ActionKind::FormulateGoals | ActionKind::AdaptYourPlan | ActionKind::SelfReflect
        )
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionKind {
    type Err = UnknownAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_name(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionTarget {
    Entity(EntityId),
    Point(Point),
}

impl fmt::Display for ActionTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionTarget::Entity(id) => write!(f, "{id}"),
            ActionTarget::Point(p) => write!(f, "({:.1}, {:.1})", p.x, p.y),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub actor: EntityId,
    pub kind: ActionKind,
    pub target: Option<ActionTarget>,
    pub requested_tick: u64,
}

impl ActionRequest {
    pub fn new(actor: EntityId, kind: ActionKind, target: Option<ActionTarget>, requested_tick: u64) -> Self {
        Self {
            actor,
            kind,
            target,
            requested_tick,
        }
    }

    pub fn wait(actor: EntityId, requested_tick: u64) -> Self {
        Self::new(actor, ActionKind::Wait, None, requested_tick)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionDuration {
    Fixed(u64),
    /// Distance over movement speed, rounded up.
    Travel,
    /// Lasts until the conversation closes.
    Conversation,
}

pub fn action_duration(kind: ActionKind) -> ActionDuration {
    use ActionKind::*;
    match kind {
        Wait | Whistle | StandUp | SitDown => ActionDuration::Fixed(1),
        Rest => ActionDuration::Fixed(10),
        TakeNap => ActionDuration::Fixed(30),
        Dance | PileUpSand => ActionDuration::Fixed(5),
        Wander => ActionDuration::Fixed(8),
        FormulateGoals | AdaptYourPlan | SelfReflect => ActionDuration::Fixed(2),
        GoTo => ActionDuration::Travel,
        TalkTo => ActionDuration::Conversation,
    }
}
