use thiserror::Error;

use super::{ActionKind, ActionRequest, ActionTarget};
use crate::mind::AgentState;
use crate::world::{EntityId, Posture, WorldSnapshot};

/// World facts needed to check a request beyond the actor's own state.
#[derive(Debug, Clone, Copy)]
pub struct ValidationContext<'a> {
    pub snapshot: &'a WorldSnapshot,
    /// Agents that cannot be addressed right now (busy or in a conversation).
    pub unavailable: &'a [EntityId],
    /// Human participants; always reachable by `talk_to`.
    pub participants: &'a [EntityId],
    pub perception_radius: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("{actor} is busy until tick {until}")]
    ActorBusy { actor: EntityId, until: u64 },
    #[error("{kind} is not possible while {}", posture.as_str())]
    PostureViolation { kind: ActionKind, posture: Posture },
    #[error("{kind} needs a target")]
    MissingTarget { kind: ActionKind },
    #[error("{kind} takes no target")]
    UnexpectedTarget { kind: ActionKind },
    #[error("{kind} needs a target of another kind")]
    WrongTargetKind { kind: ActionKind },
    #[error("cannot {kind} oneself")]
    SelfTarget { kind: ActionKind },
    #[error("no one called {0} is here")]
    UnknownTarget(EntityId),
    #[error("{0} is out of reach")]
    TargetOutOfRange(String),
    #[error("{0} is busy")]
    TargetBusy(EntityId),
    #[error("target {0} is off the island")]
    TargetOutOfBounds(String),
    #[error("there is no plan to adapt")]
    NoActivePlan,
    #[error("request names {request} but the actor is {actor}")]
    ActorMismatch { request: EntityId, actor: EntityId },
}

impl ValidationError {
    pub fn code(&self) -> &'static str {
        match self {
            ValidationError::ActorBusy { .. } => "actor_busy",
            ValidationError::PostureViolation { .. } => "posture_violation",
            ValidationError::MissingTarget { .. } => "missing_target",
            ValidationError::UnexpectedTarget { .. } => "unexpected_target",
            ValidationError::WrongTargetKind { .. } => "wrong_target_kind",
            ValidationError::SelfTarget { .. } => "self_target",
            ValidationError::UnknownTarget(_) => "unknown_target",
            ValidationError::TargetOutOfRange(_) => "target_out_of_range",
            ValidationError::TargetBusy(_) => "target_busy",
            ValidationError::TargetOutOfBounds(_) => "target_out_of_bounds",
            ValidationError::NoActivePlan => "no_active_plan",
            ValidationError::ActorMismatch { .. } => "actor_mismatch",
        }
    }
}

/// Postures from which `kind` may start.
pub fn allowed_postures(kind: ActionKind) -> &'static [Posture] {
    use ActionKind::*;
    use Posture::*;
    match kind {
        StandUp => &[Sitting, Napping],
        SitDown | Dance | Wander | GoTo => &[Standing],
        TakeNap | PileUpSand | TalkTo | Whistle => &[Standing, Sitting],
        Rest | Wait | FormulateGoals | AdaptYourPlan | SelfReflect => &[Standing, Sitting, Napping],
    }
}

/// Checks a request against the actor's state and the world. Has no effects.
pub fn validate_action(
    request: &ActionRequest,
    actor: &AgentState,
    ctx: &ValidationContext<'_>,
) -> Result<(), ValidationError> {
    let kind = request.kind;
    let now = ctx.snapshot.clock.tick();
    if &request.actor != actor.id() {
        return Err(ValidationError::ActorMismatch {
            request: request.actor.clone(),
            actor: actor.id().clone(),
        });
    }
    if actor.is_busy(now) {
        return Err(ValidationError::ActorBusy {
            actor: actor.id().clone(),
            until: actor.busy_until,
        });
    }
    let posture = actor.pose.posture;
    if !allowed_postures(kind).contains(&posture) {
        return Err(ValidationError::PostureViolation { kind, posture });
    }
    let grid = &ctx.snapshot.grid;
    match (kind, &request.target) {
        (ActionKind::TalkTo, None) | (ActionKind::GoTo, None) => Err(ValidationError::MissingTarget { kind }),
        (ActionKind::TalkTo, Some(ActionTarget::Entity(id))) => {
            if id == actor.id() {
                return Err(ValidationError::SelfTarget { kind });
            }
            if ctx.participants.contains(id) {
                return Ok(());
            }
            let pose = ctx
                .snapshot
                .pose(id)
                .ok_or_else(|| ValidationError::UnknownTarget(id.clone()))?;
            if pose.position.distance(actor.pose.position) > ctx.perception_radius {
                return Err(ValidationError::TargetOutOfRange(id.to_string()));
            }
            if ctx.unavailable.contains(id) {
                return Err(ValidationError::TargetBusy(id.clone()));
            }
            Ok(())
        }
        (ActionKind::GoTo | ActionKind::PileUpSand, Some(ActionTarget::Point(p))) => {
            if !grid.contains_point(*p) {
                return Err(ValidationError::TargetOutOfBounds(ActionTarget::Point(*p).to_string()));
            }
            if kind == ActionKind::PileUpSand && p.distance(actor.pose.position) > ctx.perception_radius {
                return Err(ValidationError::TargetOutOfRange(ActionTarget::Point(*p).to_string()));
            }
            Ok(())
        }
        (ActionKind::TalkTo | ActionKind::GoTo | ActionKind::PileUpSand, Some(_)) => {
            Err(ValidationError::WrongTargetKind { kind })
        }
        (ActionKind::AdaptYourPlan, None) if actor.plan.is_none() => Err(ValidationError::NoActivePlan),
        (_, None) => Ok(()),
        (_, Some(_)) => Err(ValidationError::UnexpectedTarget { kind }),
    }
}
