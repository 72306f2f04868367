use thiserror::Error;

use super::plan::{parse_plan, Plan, PlanError, MAX_PLAN_STEPS, MIN_PLAN_STEPS};
use super::{AgentState, Persona, SomaticState};
use crate::action::{ActionKind, ActionRequest, ActionTarget};
use crate::gateway::{
    action_catalogue, assemble_prompt, validate_tool_calls, ArgValue, Backend, BackendError, CompletionRequest,
    ModelReply, PromptError, PromptSpec, Purpose, ToolCall, ToolCallError, ToolDescriptor, Turn, END_MARKER,
};
use crate::memory::{heuristic_importance, HashEmbedder, MemoryError, MemoryKind, Scoring, ScoredMemory};
use crate::world::{nearby_entities, EntityId, WorldSnapshot};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MindSettings {
    pub perception_radius: f64,
    pub token_budget: usize,
    pub retrieval_k: usize,
    pub scoring: Scoring,
    /// Backend calls per action choice before falling back to `wait`.
    pub max_attempts: u32,
}

impl Default for MindSettings {
    fn default() -> Self {
        Self {
            perception_radius: 10.0,
            token_budget: 2048,
            retrieval_k: 8,
            scoring: Scoring::default(),
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MindError {
    #[error("agent is busy until tick {until}")]
    Busy { until: u64 },
    #[error("agent is not in a conversation")]
    NotInConversation,
    #[error("agent has no active plan")]
    NoActivePlan,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("expected a text reply, got tool calls")]
    UnexpectedToolCall,
    #[error("reply was empty")]
    EmptyReply,
    #[error("importance rating '{0}' is not a number from 1 to 10")]
    BadRating(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionChoice {
    pub request: ActionRequest,
    /// Why earlier attempts were rejected, in order.
    pub rejections: Vec<String>,
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub text: String,
    /// The speaker asked to end the conversation.
    pub ends: bool,
}

pub fn system_text(persona: &Persona, somatic: &SomaticState) -> String {
    format!(
        "You are {}, who lives on a small island of sand. {} Your way of speaking: {}. {}",
        persona.name,
        persona.disposition,
        persona.speech_style,
        somatic.descriptor()
    )
}

/// What the agent can see around it, as prompt text.
pub fn world_context(agent: &AgentState, snapshot: &WorldSnapshot, radius: f64) -> String {
    let pos = agent.pose.position;
    let (cx, cy) = snapshot.grid.cell_of(pos);
    let mut out = format!(
        "It is tick {}, {}. The island is {} by {} cells. You are at ({:.1}, {:.1}), {}. The sand here is {:.2} high.",
        snapshot.clock.tick(),
        snapshot.clock.phase().as_str(),
        snapshot.grid.width(),
        snapshot.grid.height(),
        pos.x,
        pos.y,
        agent.pose.posture.as_str(),
        snapshot.grid.get(cx, cy).unwrap_or_default(),
    );
    let nearby = nearby_entities(&snapshot.poses, agent.id(), radius).unwrap_or_default();
    if nearby.is_empty() {
        out.push_str("\nNobody is near you.");
    } else {
        let seen: Vec<String> = nearby
            .iter()
            .filter_map(|id| snapshot.pose(id))
            .map(|p| {
                format!(
                    "{} at ({:.1}, {:.1}), {}",
                    p.entity_id,
                    p.position.x,
                    p.position.y,
                    p.posture.as_str()
                )
            })
            .collect();
        out.push_str(&format!("\nNear you: {}.", seen.join("; ")));
    }
    if let Some(plan) = &agent.plan {
        out.push_str(&format!("\nYour goal: {}.", plan.goal));
        match plan.current_step() {
            Some(step) => out.push_str(&format!("\nNext step of your plan: {}", step.render())),
            None => out.push_str("\nYou have finished your plan."),
        }
    }
    out
}

/// Maps a validated catalogue call onto an action request.
pub fn request_from_call(call: &ToolCall, actor: &EntityId, tick: u64) -> Result<ActionRequest, ToolCallError> {
    let kind = ActionKind::from_name(&call.name).map_err(|_| ToolCallError::UnknownTool {
        name: call.name.clone(),
    })?;
    let target = match call.arguments.get("target") {
        None => None,
        Some(ArgValue::Entity(id)) => Some(ActionTarget::Entity(id.clone())),
        Some(ArgValue::Coordinates(p)) => Some(ActionTarget::Point(*p)),
        Some(_) => {
            return Err(ToolCallError::InvalidArgument {
                tool: call.name.clone(),
                argument: "target".into(),
                expected: "an entity or coordinates",
            })
        }
    };
    Ok(ActionRequest::new(actor.clone(), kind, target, tick))
}

struct Ask<'a> {
    purpose: Purpose,
    instruction: String,
    query_text: String,
    history: &'a [Turn],
    tools: &'a [ToolDescriptor],
}

fn ask(
    agent: &mut AgentState,
    snapshot: &WorldSnapshot,
    backend: &mut dyn Backend,
    settings: &MindSettings,
    embedder: &HashEmbedder,
    q: Ask<'_>,
) -> Result<ModelReply, MindError> {
    let now = snapshot.clock.tick();
    let memories: Vec<ScoredMemory> = if agent.memory.is_empty() {
        Vec::new()
    } else {
        let query = embedder.embed(&q.query_text);
        agent.memory.retrieve_top_k(&query, settings.retrieval_k, now, &settings.scoring)?
    };
    let context = assemble_prompt(PromptSpec {
        system_text: system_text(&agent.persona, &agent.somatic),
        world_context: world_context(agent, snapshot, settings.perception_radius),
        instruction: q.instruction,
        memories: &memories,
        history: q.history,
        tools: q.tools,
        budget: settings.token_budget,
    })?;
    Ok(backend.complete(CompletionRequest {
        agent: agent.id(),
        purpose: q.purpose,
        context: &context,
    })?)
}

fn situation(agent: &AgentState, snapshot: &WorldSnapshot, radius: f64) -> String {
    let mut parts = vec![snapshot.clock.phase().as_str().to_owned()];
    if let Some(step) = agent.plan.as_ref().and_then(Plan::current_step) {
        parts.push(step.description.clone());
    }
    for id in nearby_entities(&snapshot.poses, agent.id(), radius).unwrap_or_default() {
        parts.push(id.to_string());
    }
    parts.join(" ")
}

const CHOOSE_INSTRUCTION: &str = "What do you do next? Call exactly one tool.";

/// Asks the backend for the agent's next action, retrying on replies that are
/// not a single catalogue call and falling back to `wait`.
pub fn choose_action(
    agent: &mut AgentState,
    snapshot: &WorldSnapshot,
    backend: &mut dyn Backend,
    settings: &MindSettings,
    embedder: &HashEmbedder,
) -> Result<ActionChoice, MindError> {
    let now = snapshot.clock.tick();
    if agent.is_busy(now) {
        return Err(MindError::Busy {
            until: agent.busy_until,
        });
    }
    let catalogue = action_catalogue();
    let query_text = situation(agent, snapshot, settings.perception_radius);
    let mut rejections = Vec::new();
    for _ in 0..settings.max_attempts.max(1) {
        let instruction = match rejections.last() {
            None => CHOOSE_INSTRUCTION.to_owned(),
            Some(why) => format!("Your previous answer was rejected ({why}). {CHOOSE_INSTRUCTION}"),
        };
        let reply = ask(
            agent,
            snapshot,
            backend,
            settings,
            embedder,
            Ask {
                purpose: Purpose::ChooseAction,
                instruction,
                query_text: query_text.clone(),
                history: &[],
                tools: catalogue.tools(),
            },
        );
        let reply = match reply {
            Ok(r) => r,
            Err(MindError::Backend(e)) => {
                rejections.push(e.to_string());
                continue;
            }
            Err(e) => return Err(e),
        };
        let call = validate_tool_calls(&reply, &catalogue)
            .and_then(|calls| calls.into_iter().next().ok_or(ToolCallError::NoToolCall))
            .and_then(|call| request_from_call(&call, agent.id(), now));
        match call {
            Ok(request) => {
                return Ok(ActionChoice {
                    request,
                    rejections,
                    fell_back: false,
                })
            }
            Err(e) => rejections.push(e.to_string()),
        }
    }
    Ok(ActionChoice {
        request: ActionRequest::wait(agent.id().clone(), now),
        rejections,
        fell_back: true,
    })
}

const STEP_FORMAT: &str = "Answer with one line 'goal: <your goal>' and one line per step in the form \
'step: <action> [target] | <what you mean to do>'. Actions: talk_to <name>, go_to <x> <y>, \
pile_up_sand [<x> <y>], rest, wait, wander, sit_down, take_nap, stand_up, dance, whistle, self_reflect.";

fn text_of(reply: ModelReply) -> Result<String, MindError> {
    match reply {
        ModelReply::Text(t) if t.trim().is_empty() => Err(MindError::EmptyReply),
        ModelReply::Text(t) => Ok(t),
        ModelReply::ToolCalls(_) => Err(MindError::UnexpectedToolCall),
    }
}

fn remember_plan(agent: &mut AgentState, now: u64, text: String, embedder: &HashEmbedder) -> Result<(), MindError> {
    let importance = heuristic_importance(&text, MemoryKind::Plan);
    let embedding = embedder.embed(&text);
    agent.memory.record(now, MemoryKind::Plan, text, importance, embedding)?;
    Ok(())
}

/// Asks for a goal and a plan of two to five steps and installs it.
pub fn formulate_goals(
    agent: &mut AgentState,
    snapshot: &WorldSnapshot,
    backend: &mut dyn Backend,
    settings: &MindSettings,
    embedder: &HashEmbedder,
) -> Result<Plan, MindError> {
    let instruction = format!("Decide what you want to achieve and plan two to five steps. {STEP_FORMAT}");
    let query_text = format!("{} goal plan {}", agent.persona.disposition, snapshot.clock.phase().as_str());
    let reply = ask(
        agent,
        snapshot,
        backend,
        settings,
        embedder,
        Ask {
            purpose: Purpose::FormulateGoals,
            instruction,
            query_text,
            history: &[],
            tools: &[],
        },
    )?;
    let parsed = parse_plan(&text_of(reply)?)?;
    let goal = parsed.goal.ok_or(PlanError::MissingGoal)?;
    if !(MIN_PLAN_STEPS..=MAX_PLAN_STEPS).contains(&parsed.steps.len()) {
        return Err(PlanError::StepCount {
            got: parsed.steps.len(),
            min: MIN_PLAN_STEPS,
            max: MAX_PLAN_STEPS,
        }
        .into());
    }
    let plan = Plan {
        goal,
        steps: parsed.steps,
        cursor: 0,
    };
    remember_plan(agent, snapshot.clock.tick(), plan.summary(), embedder)?;
    agent.plan = Some(plan.clone());
    Ok(plan)
}

/// Replaces the unfinished steps of the current plan in response to `trigger`.
/// Completed steps are kept; the goal changes only if the reply states one.
pub fn adapt_plan(
    agent: &mut AgentState,
    trigger: &str,
    snapshot: &WorldSnapshot,
    backend: &mut dyn Backend,
    settings: &MindSettings,
    embedder: &HashEmbedder,
) -> Result<Plan, MindError> {
    let current = agent.plan.clone().ok_or(MindError::NoActivePlan)?;
    let remaining: Vec<String> = current.steps[current.cursor.min(current.steps.len())..]
        .iter()
        .map(|s| format!("step: {}", s.render()))
        .collect();
    let remaining = if remaining.is_empty() {
        "(none)".to_owned()
    } else {
        remaining.join("\n")
    };
    let instruction = format!(
        "Something happened: {trigger}\nYour goal is: {}\nYour remaining steps are:\n{remaining}\n\
         Revise the remaining steps (one to five). You may state a new goal. {STEP_FORMAT}",
        current.goal
    );
    let reply = ask(
        agent,
        snapshot,
        backend,
        settings,
        embedder,
        Ask {
            purpose: Purpose::AdaptPlan,
            instruction,
            query_text: trigger.to_owned(),
            history: &[],
            tools: &[],
        },
    )?;
    let parsed = parse_plan(&text_of(reply)?)?;
    if !(1..=MAX_PLAN_STEPS).contains(&parsed.steps.len()) {
        return Err(PlanError::StepCount {
            got: parsed.steps.len(),
            min: 1,
            max: MAX_PLAN_STEPS,
        }
        .into());
    }
    let cursor = current.cursor.min(current.steps.len());
    let mut steps = current.steps[..cursor].to_vec();
    steps.extend(parsed.steps);
    let plan = Plan {
        goal: parsed.goal.unwrap_or(current.goal),
        steps,
        cursor,
    };
    remember_plan(agent, snapshot.clock.tick(), format!("I changed my plan. {}", plan.summary()), embedder)?;
    agent.plan = Some(plan.clone());
    Ok(plan)
}

/// Produces the agent's next line in its open conversation with `partner`.
pub fn compose_utterance(
    agent: &mut AgentState,
    partner: &EntityId,
    history: &[Turn],
    snapshot: &WorldSnapshot,
    backend: &mut dyn Backend,
    settings: &MindSettings,
    embedder: &HashEmbedder,
) -> Result<Utterance, MindError> {
    if agent.conversation.is_none() {
        return Err(MindError::NotInConversation);
    }
    let instruction = format!(
        "You are talking with {partner}. Say your next line, in your own voice. \
         Add {END_MARKER} when you want to end the conversation."
    );
    let query_text = match history.last() {
        Some(t) => format!("{partner} {}", t.text),
        None => partner.to_string(),
    };
    let reply = ask(
        agent,
        snapshot,
        backend,
        settings,
        embedder,
        Ask {
            purpose: Purpose::Speak,
            instruction,
            query_text,
            history,
            tools: &[],
        },
    )?;
    let raw = match reply {
        ModelReply::Text(t) => t,
        ModelReply::ToolCalls(_) => return Err(MindError::UnexpectedToolCall),
    };
    let ends = raw.contains(END_MARKER);
    let text = raw.replace(END_MARKER, "").trim().to_owned();
    if text.is_empty() && !ends {
        return Err(MindError::EmptyReply);
    }
    Ok(Utterance { text, ends })
}

/// Asks the backend how important an observation is, on a 1 to 10 scale.
pub fn rate_importance(
    agent: &EntityId,
    system_text: &str,
    text: &str,
    backend: &mut dyn Backend,
    budget: usize,
) -> Result<u8, MindError> {
    let context = assemble_prompt(PromptSpec {
        system_text: system_text.to_owned(),
        world_context: String::new(),
        instruction: format!(
            "On a scale from 1 (mundane, like brushing sand off your feet) to 10 (life-changing), \
             how important is this to you? Reply with a single number.\n{text}"
        ),
        memories: &[],
        history: &[],
        tools: &[],
        budget,
    })?;
    let reply = text_of(backend.complete(CompletionRequest {
        agent,
        purpose: Purpose::RateImportance,
        context: &context,
    })?)?;
    let digits: String = reply
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(char::is_ascii_digit)
        .collect();
    digits
        .parse::<u8>()
        .ok()
        .filter(|n| (1..=10).contains(n))
        .ok_or(MindError::BadRating(reply))
}
