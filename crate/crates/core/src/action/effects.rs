use rand::{Rng, RngCore};

use super::{action_duration, ActionDuration, ActionKind, ActionRequest, ActionTarget};
use crate::mind::{update_somatic, AgentState, SomaticState};
use crate::world::{travel_ticks, CellRegion, EntityId, Point, Posture, WorldEvent, WorldSnapshot};

/// Elevation added to each cell of the 3x3 patch by `pile_up_sand`.
pub const PILE_DELTA: f64 = 0.1;

pub struct ExecutionContext<'a> {
    pub snapshot: &'a WorldSnapshot,
    /// Cells moved per tick.
    pub speed: f64,
    pub perception_radius: f64,
    pub rng: &'a mut dyn RngCore,
}

/// Work an action hands back to the caller instead of doing itself.
#[derive(Debug, Clone, PartialEq)]
pub enum Delegation {
    FormulateGoals,
    AdaptPlan,
    Reflect,
    Converse(EntityId),
}

/// Everything executing an action changes, for the caller to apply.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEffects {
    pub posture: Option<Posture>,
    pub terrain_edits: Vec<(CellRegion, f64)>,
    pub somatic: SomaticState,
    /// Events to deliver at the start of the next tick.
    pub events: Vec<WorldEvent>,
    /// First-person account of the action for the actor's memory.
    pub memory_text: String,
    pub duration_ticks: u64,
    pub destination: Option<Point>,
    pub delegate: Option<Delegation>,
}

fn fmt_point(p: Point) -> String {
    format!("({:.1}, {:.1})", p.x, p.y)
}

fn wander_target(from: Point, reach: f64, snapshot: &WorldSnapshot, rng: &mut dyn RngCore) -> Point {
    let angle = rng.random::<f64>() * std::f64::consts::TAU;
    let dist = reach * (0.5 + 0.5 * rng.random::<f64>());
    let max_x = snapshot.grid.width() as f64 - 0.5;
    let max_y = snapshot.grid.height() as f64 - 0.5;
    Point::new(
        (from.x + dist * angle.cos()).clamp(0.5, max_x),
        (from.y + dist * angle.sin()).clamp(0.5, max_y),
    )
}

/// Computes the effects of an already validated request.
pub fn execute_action(request: &ActionRequest, actor: &AgentState, ctx: &mut ExecutionContext<'_>) -> ActionEffects {
    let kind = request.kind;
    let here = actor.pose.position;
    let now = ctx.snapshot.clock.tick();
    let target_point = match &request.target {
        Some(ActionTarget::Point(p)) => Some(*p),
        _ => None,
    };

    let mut destination = None;
    let duration_ticks = match action_duration(kind) {
        ActionDuration::Fixed(n) => n,
        ActionDuration::Conversation => 1,
        ActionDuration::Travel => {
            let to = target_point.unwrap_or(here);
            destination = Some(to);
            travel_ticks(here.distance(to), ctx.speed)
        }
    };
    if kind == ActionKind::Wander {
        destination = Some(wander_target(here, ctx.speed * duration_ticks as f64, ctx.snapshot, ctx.rng));
    }

    let mut effects = ActionEffects {
        posture: None,
        terrain_edits: Vec::new(),
        somatic: update_somatic(actor.somatic, kind, duration_ticks),
        events: Vec::new(),
        memory_text: String::new(),
        duration_ticks,
        destination,
        delegate: None,
    };

    effects.memory_text = match kind {
        ActionKind::TalkTo => {
            let who = match &request.target {
                Some(ActionTarget::Entity(id)) => id.clone(),
                _ => EntityId::new("someone"),
            };
            let text = format!("I went to talk with {who}.");
            effects.delegate = Some(Delegation::Converse(who));
            text
        }
        ActionKind::PileUpSand => {
            let at = target_point.unwrap_or(here);
            let grid = &ctx.snapshot.grid;
            let (cx, cy) = grid.cell_of(at);
            effects
                .terrain_edits
                .push((CellRegion::around(cx, cy, 1, grid.width(), grid.height()), PILE_DELTA));
            format!("I piled up sand at {}.", fmt_point(at))
        }
        ActionKind::Rest => "I rested for a while.".to_owned(),
        ActionKind::Wait => "I waited and watched.".to_owned(),
        ActionKind::Wander => format!("I wandered off toward {}.", fmt_point(destination.unwrap_or(here))),
        ActionKind::GoTo => format!("I set off toward {}.", fmt_point(destination.unwrap_or(here))),
        ActionKind::SitDown => {
            effects.posture = Some(Posture::Sitting);
            "I sat down.".to_owned()
        }
        ActionKind::TakeNap => {
            effects.posture = Some(Posture::Napping);
            "I lay down for a nap.".to_owned()
        }
        ActionKind::StandUp => {
            effects.posture = Some(Posture::Standing);
            "I stood up.".to_owned()
        }
        ActionKind::Dance => "I danced.".to_owned(),
        ActionKind::FormulateGoals => {
            effects.delegate = Some(Delegation::FormulateGoals);
            "I thought about what I want.".to_owned()
        }
        ActionKind::AdaptYourPlan => {
            effects.delegate = Some(Delegation::AdaptPlan);
            "I reconsidered my plan.".to_owned()
        }
        ActionKind::SelfReflect => {
            effects.delegate = Some(Delegation::Reflect);
            "I turned my thoughts inward.".to_owned()
        }
        ActionKind::Whistle => {
            let (cx, cy) = ctx.snapshot.grid.cell_of(here);
            effects.events.push(WorldEvent::ambient(
                actor.id().as_str(),
                format!("{} whistling", actor.id()),
                2.0 * ctx.perception_radius,
                CellRegion::cell(cx, cy),
                now,
            ));
            "I whistled.".to_owned()
        }
    };
    effects
}
