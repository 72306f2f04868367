//! The deterministic tick loop.
//!
//! Each tick runs five stages in a fixed order:
//! 1. advance the clock;
//! 2. deliver events spawned last tick, then drain the inbox (terrain edits,
//!    utterances, shadows) and derive tremor and shadow events;
//! 3. for each agent in roster order: perceive, reflect if due, then either
//!    pick and start an action (when idle) or keep moving;
//! 4. advance each open conversation by one turn, in id order;
//! 5. append the tick's log entries and flush.

mod conversation;
mod inbox;

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action::{
    execute_action, validate_action, ActionKind, ActionRequest, ActionTarget, Delegation, ExecutionContext,
    ValidationContext,
};
use crate::gateway::{Backend, ScriptError, ScriptedBackend, Turn};
use crate::memory::{
    heuristic_importance, reflect, synthesize_reflection, HashEmbedder, MemoryError, MemoryKind, MemoryRecord,
    ReflectionSettings,
};
use crate::mind::{
    adapt_plan, choose_action, compose_utterance, formulate_goals, perceive, rate_importance, system_text,
    update_somatic, Activity, AgentState, ConversationId, MindError, MindSettings, Plan, SomaticState,
};
use crate::scenario::{Scenario, ScenarioError};
use crate::session_log::{
    canonical_json, error_payload, Category, LogEntry, LogError, LogSink, SessionLog, PARTICIPANT_ACTOR, WORLD_ACTOR,
};
use crate::world::{
    detect_shadow, detect_tremor, step_towards, CellRegion, EntityId, EventKind, ShadowMask, TerrainGrid,
    WorldClock, WorldError, WorldEvent, WorldSnapshot,
};

pub use conversation::{CloseReason, Conversation, ConversationError, ConversationState, DEFAULT_MAX_TURNS};
pub use inbox::{quantize_delta, InputError, InputOrigin, Inbox, ParticipantInput, QueuedInput, MAX_EDIT_DELTA};

/// The single seeded source of randomness for a session.
#[derive(Debug, Clone)]
pub struct SessionRng {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SessionRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Words consumed from the stream so far.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }
}

impl RngCore for SessionRng {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// How observation importance is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportanceMode {
    /// Length-based heuristic; makes no backend calls.
    Heuristic,
    /// Ask the backend, falling back to the heuristic on failure.
    Backend,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub tremor_threshold: f64,
    pub speed: f64,
    pub max_turns: usize,
    pub reply_timeout: u64,
    pub reflection: ReflectionSettings,
    pub reflection_cooldown: u64,
    pub mind: MindSettings,
    pub importance: ImportanceMode,
}

impl SimConfig {
    pub fn from_scenario(s: &Scenario) -> Result<Self, ScenarioError> {
        let scoring = s.memory.scoring()?;
        Ok(Self {
            tremor_threshold: s.world.tremor_threshold,
            speed: s.world.speed,
            max_turns: s.conversation.max_turns,
            reply_timeout: s.conversation.reply_timeout,
            reflection: ReflectionSettings {
                threshold: s.memory.reflection_threshold,
                top_k: s.memory.retrieval_k,
                recent_window: 5,
                scoring,
                token_budget: s.gateway.token_budget,
            },
            reflection_cooldown: s.memory.reflection_cooldown,
            mind: MindSettings {
                perception_radius: s.world.perception_radius,
                token_budget: s.gateway.token_budget,
                retrieval_k: s.memory.retrieval_k,
                scoring,
                max_attempts: s.gateway.max_attempts,
            },
            importance: ImportanceMode::Heuristic,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub tick: u64,
    pub events: Vec<WorldEvent>,
    /// Actions started this tick, in roster order.
    pub actions: Vec<ActionRequest>,
    pub entries: Vec<LogEntry>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("scheduled input at tick {tick}: {source}")]
    Schedule { tick: u64, source: InputError },
    #[error("session already finished")]
    Finished,
}

/// A participant's words to an agent, waiting until the agent is free.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
struct Hail {
    speaker: EntityId,
    text: String,
    tick: u64,
}

struct Pending {
    actor: String,
    category: Category,
    payload: Map<String, Value>,
}

#[derive(Default)]
struct TickLog(Vec<Pending>);

impl TickLog {
    fn push(&mut self, actor: &str, category: Category, payload: Value) {
        let payload = match payload {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        self.0.push(Pending {
            actor: actor.to_owned(),
            category,
            payload,
        });
    }

    fn error(&mut self, actor: &str, code: &str, message: impl std::fmt::Display) {
        self.0.push(Pending {
            actor: actor.to_owned(),
            category: Category::Error,
            payload: error_payload(code, &message.to_string()),
        });
    }

    fn memory(&mut self, actor: &str, kind: &str, r: &MemoryRecord) {
        self.push(
            actor,
            Category::Contemplation,
            json!({"kind": kind, "text": r.text, "importance": r.importance, "memory_id": r.id}),
        );
    }

    fn plan(&mut self, actor: &str, kind: &str, plan: &Plan) {
        let steps: Vec<String> = plan.steps.iter().map(|s| s.render()).collect();
        self.push(
            actor,
            Category::Planning,
            json!({"kind": kind, "goal": plan.goal, "steps": steps, "cursor": plan.cursor}),
        );
    }
}

fn region_json(r: CellRegion) -> Value {
    json!({"x": r.x, "y": r.y, "width": r.width, "height": r.height})
}

fn target_json(t: &Option<ActionTarget>) -> Value {
    match t {
        None => Value::Null,
        Some(ActionTarget::Entity(id)) => json!(id.as_str()),
        Some(ActionTarget::Point(p)) => json!({"x": p.x, "y": p.y}),
    }
}

fn event_json(e: &WorldEvent) -> Value {
    let mut v = json!({
        "kind": e.kind.as_str(),
        "magnitude": e.magnitude,
        "region": region_json(e.region),
    });
    if let Some(s) = &e.source {
        v["source"] = json!(s);
    }
    if let Some(p) = &e.payload {
        v["description"] = json!(p);
    }
    v
}

#[allow(clippy::too_many_arguments)]
fn rate(
    mode: ImportanceMode,
    backend: &mut dyn Backend,
    agent: &EntityId,
    system: &str,
    budget: usize,
    text: &str,
    kind: MemoryKind,
) -> u8 {
    match mode {
        ImportanceMode::Heuristic => heuristic_importance(text, kind),
        ImportanceMode::Backend => {
            rate_importance(agent, system, text, backend, budget).unwrap_or_else(|_| heuristic_importance(text, kind))
        }
    }
}

pub struct Simulation {
    scenario_name: String,
    seed: u64,
    config: SimConfig,
    clock: WorldClock,
    grid: TerrainGrid,
    agents: Vec<AgentState>,
    participants: Vec<EntityId>,
    microphone: CellRegion,
    conversations: BTreeMap<ConversationId, Conversation>,
    hails: BTreeMap<EntityId, Hail>,
    closed: Vec<Conversation>,
    next_conversation: u64,
    pending_events: Vec<WorldEvent>,
    inbox: Inbox,
    schedule: BTreeMap<u64, Vec<ParticipantInput>>,
    rng: SessionRng,
    backend: Box<dyn Backend>,
    embedder: HashEmbedder,
    log: SessionLog,
    started: bool,
    finished: bool,
    actions_executed: u64,
}

impl Simulation {
    pub fn new(scenario: &Scenario, seed: u64, backend: Box<dyn Backend>) -> Result<Self, SimError> {
        let config = SimConfig::from_scenario(scenario)?;
        let grid = scenario.terrain()?;
        let mut agents = Vec::with_capacity(scenario.agents.len());
        for spec in &scenario.agents {
            let mut a = AgentState::new(spec.persona(), spec.position(), scenario.memory.dimension)?;
            if let Some(t) = spec.tiredness {
                a.somatic = SomaticState::new(t);
            }
            agents.push(a);
        }
        let inbox = Inbox::new(
            grid.width(),
            grid.height(),
            agents.iter().map(|a| a.id().clone()).collect(),
        );
        let mut schedule: BTreeMap<u64, Vec<ParticipantInput>> = BTreeMap::new();
        for s in &scenario.schedule {
            let input = inbox
                .check(s.input.clone())
                .map_err(|source| SimError::Schedule { tick: s.tick, source })?;
            schedule.entry(s.tick).or_default().push(input);
        }
        Ok(Self {
            scenario_name: scenario.name.clone(),
            seed,
            clock: WorldClock::new(0, scenario.world.ticks_per_day)?,
            grid,
            participants: scenario.participants.iter().map(EntityId::new).collect(),
            microphone: scenario.microphone(),
            embedder: HashEmbedder::new(scenario.memory.dimension),
            config,
            agents,
            conversations: BTreeMap::new(),
            hails: BTreeMap::new(),
            closed: Vec::new(),
            next_conversation: 1,
            pending_events: Vec::new(),
            inbox,
            schedule,
            rng: SessionRng::new(seed),
            backend,
            log: SessionLog::new(),
            started: false,
            finished: false,
            actions_executed: 0,
        })
    }

    /// Builds a simulation driven by the scenario's script.
    pub fn scripted(scenario: &Scenario, seed: u64) -> Result<Self, SimError> {
        let backend = match scenario.script_text()? {
            Some(text) => ScriptedBackend::parse(&text)?,
            None => ScriptedBackend::new(),
        };
        Self::new(scenario, seed, Box::new(backend))
    }

    pub fn set_importance_mode(&mut self, mode: ImportanceMode) {
        self.config.importance = mode;
    }

    pub fn add_log_sink(&mut self, sink: impl LogSink + 'static) {
        self.log.add_sink(sink);
    }

    pub fn inbox(&self) -> Inbox {
        self.inbox.clone()
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scenario_name(&self) -> &str {
        &self.scenario_name
    }

    pub fn clock(&self) -> WorldClock {
        self.clock
    }

    pub fn grid(&self) -> &TerrainGrid {
        &self.grid
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn participants(&self) -> &[EntityId] {
        &self.participants
    }

    pub fn open_conversations(&self) -> impl Iterator<Item = &Conversation> {
        self.conversations.values()
    }

    pub fn closed_conversations(&self) -> &[Conversation] {
        &self.closed
    }

    pub fn actions_executed(&self) -> u64 {
        self.actions_executed
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn world_snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            clock: self.clock,
            grid: self.grid.clone(),
            poses: self.agents.iter().map(|a| a.pose.clone()).collect(),
        }
    }

    /// SHA-256 over the canonical rendering of clock, terrain, agents, open
    /// conversations and unanswered hails.
    pub fn digest(&self) -> String {
        let conversations: Vec<&Conversation> = self.conversations.values().collect();
        let state = json!({
            "tick": self.clock.tick(),
            "terrain": serde_json::to_value(&self.grid).unwrap_or(Value::Null),
            "agents": serde_json::to_value(&self.agents).unwrap_or(Value::Null),
            "conversations": serde_json::to_value(&conversations).unwrap_or(Value::Null),
            "hails": serde_json::to_value(&self.hails).unwrap_or(Value::Null),
        });
        hex::encode(Sha256::digest(canonical_json(&state).as_bytes()))
    }

    fn commit(&mut self, tick: u64, pending: TickLog) -> Result<Vec<LogEntry>, SimError> {
        let mut entries = Vec::with_capacity(pending.0.len());
        for p in pending.0 {
            entries.push(self.log.record(tick, &p.actor, p.category, p.payload)?);
        }
        self.log.flush()?;
        Ok(entries)
    }

    /// Writes the session header. Called automatically by the first tick.
    pub fn start(&mut self) -> Result<Vec<LogEntry>, SimError> {
        if self.started {
            return Ok(Vec::new());
        }
        self.started = true;
        let mut out = TickLog::default();
        let names: Vec<&str> = self.agents.iter().map(|a| a.id().as_str()).collect();
        out.push(
            WORLD_ACTOR,
            Category::Event,
            json!({
                "kind": "session_start",
                "scenario": self.scenario_name,
                "seed": self.seed,
                "agents": names,
                "width": self.grid.width(),
                "height": self.grid.height(),
            }),
        );
        self.commit(self.clock.tick(), out)
    }

    /// Writes the closing entry with the final digest and returns the digest.
    pub fn finish(&mut self) -> Result<(String, Vec<LogEntry>), SimError> {
        if self.finished {
            return Err(SimError::Finished);
        }
        self.start()?;
        self.finished = true;
        let digest = self.digest();
        let mut out = TickLog::default();
        out.push(
            WORLD_ACTOR,
            Category::Event,
            json!({
                "kind": "session_end",
                "ticks": self.clock.tick(),
                "actions": self.actions_executed,
                "digest": digest,
            }),
        );
        let entries = self.commit(self.clock.tick(), out)?;
        Ok((digest, entries))
    }

    /// Runs `ticks` ticks and finishes the session, returning the digest.
    pub fn run(&mut self, ticks: u64) -> Result<String, SimError> {
        for _ in 0..ticks {
            self.tick()?;
        }
        Ok(self.finish()?.0)
    }

    pub fn tick(&mut self) -> Result<TickReport, SimError> {
        if self.finished {
            return Err(SimError::Finished);
        }
        let mut header = if self.started { Vec::new() } else { self.start()? };

        // 1. clock
        self.clock = self.clock.advance();
        let now = self.clock.tick();
        let mut out = TickLog::default();

        // 2. events and inputs
        let scheduled = self.schedule.remove(&now).unwrap_or_default();
        let inputs = self
            .inbox
            .drain_with(scheduled)
            .map_err(|source| SimError::Schedule { tick: now, source })?;
        let events = self.deliver_events(now, inputs, &mut out);

        // 3. agents
        let mut actions = Vec::new();
        for i in 0..self.agents.len() {
            self.agent_turn(i, now, &events, &mut out, &mut actions);
        }

        // 4. conversations
        let ids: Vec<ConversationId> = self.conversations.keys().copied().collect();
        for id in ids {
            self.conversation_turn(id, now, &events, &mut out);
        }

        // 5. log
        let mut entries = self.commit(now, out)?;
        if !header.is_empty() {
            header.append(&mut entries);
            entries = header;
        }
        Ok(TickReport {
            tick: now,
            events,
            actions,
            entries,
        })
    }

    fn deliver_events(&mut self, now: u64, inputs: Vec<QueuedInput>, out: &mut TickLog) -> Vec<WorldEvent> {
        let mut events = Vec::new();
        for mut e in std::mem::take(&mut self.pending_events) {
            e.tick = now;
            out.push(WORLD_ACTOR, Category::Event, event_json(&e));
            events.push(e);
        }
        for q in inputs {
            let origin = q.origin.as_str();
            match q.input {
                ParticipantInput::TerrainEdit { region, delta } => match self.grid.apply_edit(region, delta) {
                    Ok(total) => {
                        out.push(
                            PARTICIPANT_ACTOR,
                            Category::Event,
                            json!({
                                "kind": "terrain_edit",
                                "origin": origin,
                                "order": q.order,
                                "region": region_json(region),
                                "delta": delta,
                                "total_change": total,
                            }),
                        );
                        if let Some(t) = detect_tremor(total, self.config.tremor_threshold, region, now) {
                            out.push(WORLD_ACTOR, Category::Event, event_json(&t));
                            events.push(t);
                        }
                    }
                    Err(e) => out.error(PARTICIPANT_ACTOR, "rejected_input", e),
                },
                ParticipantInput::Utterance { speaker, text, target } => {
                    out.push(
                        PARTICIPANT_ACTOR,
                        Category::Speech,
                        json!({
                            "origin": origin,
                            "order": q.order,
                            "speaker": speaker,
                            "text": text,
                            "target": target.as_ref().map(EntityId::as_str),
                        }),
                    );
                    if let Some(e) = WorldEvent::utterance(speaker, text, target, self.microphone, now) {
                        events.push(e);
                    }
                }
                ParticipantInput::Shadow { cells } => {
                    let mut mask = ShadowMask::clear(self.grid.width(), self.grid.height());
                    for &(x, y) in &cells {
                        mask.set(x, y, true);
                    }
                    out.push(
                        PARTICIPANT_ACTOR,
                        Category::Event,
                        json!({"kind": "shadow_input", "origin": origin, "order": q.order, "cells": cells}),
                    );
                    let poses: Vec<_> = self.agents.iter().map(|a| a.pose.clone()).collect();
                    match detect_shadow(&mask, &self.grid, &poses, now) {
                        Ok(found) => {
                            for e in found {
                                out.push(WORLD_ACTOR, Category::Event, event_json(&e));
                                events.push(e);
                            }
                        }
                        Err(e) => out.error(PARTICIPANT_ACTOR, "rejected_input", e),
                    }
                }
            }
        }
        events
    }

    fn record_memory(&mut self, i: usize, now: u64, kind: MemoryKind, text: String) -> Option<MemoryRecord> {
        let agent = &mut self.agents[i];
        let sys = system_text(&agent.persona, &agent.somatic);
        let importance = rate(
            self.config.importance,
            &mut *self.backend,
            agent.id(),
            &sys,
            self.config.mind.token_budget,
            &text,
            kind,
        );
        let embedding = self.embedder.embed(&text);
        agent.memory.record(now, kind, text, importance, embedding).ok()
    }

    fn agent_turn(
        &mut self,
        i: usize,
        now: u64,
        events: &[WorldEvent],
        out: &mut TickLog,
        actions: &mut Vec<ActionRequest>,
    ) {
        let snapshot = self.world_snapshot();
        let name = self.agents[i].id().as_str().to_owned();
        let mode = self.config.importance;
        let budget = self.config.mind.token_budget;

        {
            let agent = &mut self.agents[i];
            if agent.busy_until <= now && agent.conversation.is_none() {
                agent.activity = None;
            }
            let sys = system_text(&agent.persona, &agent.somatic);
            let id = agent.id().clone();
            let backend = &mut *self.backend;
            let mut rater = |text: &str, kind: MemoryKind| rate(mode, backend, &id, &sys, budget, text, kind);
            match perceive(
                agent,
                &snapshot,
                events,
                self.config.mind.perception_radius,
                &self.embedder,
                &mut rater,
            ) {
                Ok(records) => records.iter().for_each(|r| out.memory(&name, "observation", r)),
                Err(e) => out.error(&name, "perception_failed", e),
            }
        }

        {
            let agent = &mut self.agents[i];
            if agent.memory.should_reflect(self.config.reflection.threshold) && now >= agent.reflection_retry_at {
                let sys = system_text(&agent.persona, &agent.somatic);
                let id = agent.id().clone();
                match synthesize_reflection(
                    &mut agent.memory,
                    &mut *self.backend,
                    &id,
                    &sys,
                    now,
                    &self.config.reflection,
                    &self.embedder,
                ) {
                    Ok(records) => records.iter().for_each(|r| out.memory(&name, "reflection", r)),
                    Err(e) => {
                        agent.reflection_retry_at = now + self.config.reflection_cooldown;
                        out.error(&name, "reflection_failed", e);
                    }
                }
            }
        }

        let me = self.agents[i].id().clone();
        for e in events {
            let from_person = e.source.as_deref().is_some_and(|s| !self.is_agent(s));
            if e.kind == EventKind::Utterance && e.target.as_ref() == Some(&me) && from_person {
                self.hails.entry(me.clone()).or_insert_with(|| Hail {
                    speaker: EntityId::new(e.source.clone().unwrap_or_default()),
                    text: e.payload.clone().unwrap_or_default(),
                    tick: now,
                });
            }
        }

        let idle = {
            let a = &self.agents[i];
            a.busy_until <= now && a.conversation.is_none()
        };
        if !idle {
            let a = &mut self.agents[i];
            if a.conversation.is_none() {
                if let Some(dest) = a.activity.as_ref().and_then(|act| act.destination) {
                    a.pose = step_towards(&a.pose, dest, self.config.speed);
                }
            }
            return;
        }

        // A participant addressing an agent opens a conversation once it is free.
        if let Some(hail) = self.hails.remove(&me) {
            if now.saturating_sub(hail.tick) <= self.config.reply_timeout {
                if let Some(id) = self.open_conversation(hail.speaker.clone(), me.clone(), now, out) {
                    if let Some(c) = self.conversations.get_mut(&id) {
                        let _ = c.add_turn(&hail.speaker, hail.text, now);
                    }
                }
                return;
            }
        }

        if !self.agents[i].activated {
            self.agents[i].activated = true;
            if self.agents[i].plan.is_none() {
                let agent = &mut self.agents[i];
                match formulate_goals(agent, &snapshot, &mut *self.backend, &self.config.mind, &self.embedder) {
                    Ok(plan) => out.plan(&name, "formulate", &plan),
                    Err(e) => out.error(&name, "planning_failed", e),
                }
            }
        }

        let choice = {
            let agent = &mut self.agents[i];
            choose_action(agent, &snapshot, &mut *self.backend, &self.config.mind, &self.embedder)
        };
        let (mut request, fell_back) = match choice {
            Ok(c) => {
                if !c.rejections.is_empty() {
                    let code = if c.fell_back { "fallback_wait" } else { "invalid_reply" };
                    out.error(&name, code, c.rejections.join("; "));
                }
                (c.request, c.fell_back)
            }
            Err(e) => {
                out.error(&name, "choice_failed", e);
                (ActionRequest::wait(me.clone(), now), true)
            }
        };

        let unavailable: Vec<EntityId> = self
            .agents
            .iter()
            .filter(|a| a.is_busy(now))
            .map(|a| a.id().clone())
            .collect();
        let vctx = ValidationContext {
            snapshot: &snapshot,
            unavailable: &unavailable,
            participants: &self.participants,
            perception_radius: self.config.mind.perception_radius,
        };
        if let Err(e) = validate_action(&request, &self.agents[i], &vctx) {
            let mut m = error_payload(e.code(), &e.to_string());
            m.insert("action".into(), json!(request.kind.name()));
            out.push(&name, Category::Error, Value::Object(m));
            request = ActionRequest::wait(me.clone(), now);
        }

        let effects = {
            let mut ctx = ExecutionContext {
                snapshot: &snapshot,
                speed: self.config.speed,
                perception_radius: self.config.mind.perception_radius,
                rng: &mut self.rng,
            };
            execute_action(&request, &self.agents[i], &mut ctx)
        };

        for (region, delta) in &effects.terrain_edits {
            match self.grid.apply_edit(*region, *delta) {
                Ok(total) => {
                    if let Some(t) = detect_tremor(total, self.config.tremor_threshold, *region, now) {
                        self.pending_events.push(t);
                    }
                }
                Err(e) => out.error(&name, "edit_failed", e),
            }
        }
        self.pending_events.extend(effects.events.iter().cloned());

        {
            let agent = &mut self.agents[i];
            if let Some(p) = effects.posture {
                agent.pose.posture = p;
            }
            agent.somatic = effects.somatic;
            agent.busy_until = now + effects.duration_ticks;
            agent.activity = Some(Activity {
                kind: request.kind,
                target: request.target.clone(),
                started: now,
                destination: effects.destination,
            });
            if let Some(plan) = agent.plan.as_mut() {
                plan.advance_on(request.kind);
            }
            if let Some(dest) = effects.destination {
                agent.pose = step_towards(&agent.pose, dest, self.config.speed);
            }
        }
        if request.kind != ActionKind::Wait {
            self.record_memory(i, now, MemoryKind::Observation, effects.memory_text.clone());
        }
        out.push(
            &name,
            Category::Action,
            json!({
                "action": request.kind.name(),
                "target": target_json(&request.target),
                "duration": effects.duration_ticks,
                "fell_back": fell_back,
            }),
        );
        self.actions_executed += 1;
        actions.push(request.clone());

        match effects.delegate {
            None => {}
            Some(Delegation::FormulateGoals) => {
                let agent = &mut self.agents[i];
                match formulate_goals(agent, &snapshot, &mut *self.backend, &self.config.mind, &self.embedder) {
                    Ok(plan) => out.plan(&name, "formulate", &plan),
                    Err(e) => out.error(&name, "planning_failed", e),
                }
            }
            Some(Delegation::AdaptPlan) => {
                let agent = &mut self.agents[i];
                match adapt_plan(
                    agent,
                    "I decided to rethink my plan.",
                    &snapshot,
                    &mut *self.backend,
                    &self.config.mind,
                    &self.embedder,
                ) {
                    Ok(plan) => out.plan(&name, "adapt", &plan),
                    Err(e) => out.error(&name, "planning_failed", e),
                }
            }
            Some(Delegation::Reflect) => {
                let agent = &mut self.agents[i];
                let sys = system_text(&agent.persona, &agent.somatic);
                let id = agent.id().clone();
                match reflect(
                    &mut agent.memory,
                    &mut *self.backend,
                    &id,
                    &sys,
                    now,
                    &self.config.reflection,
                    &self.embedder,
                ) {
                    Ok(records) => records.iter().for_each(|r| out.memory(&name, "reflection", r)),
                    Err(e) => out.error(&name, "reflection_failed", e),
                }
            }
            Some(Delegation::Converse(target)) => {
                if self.agent_index(target.as_str()).is_some_and(|j| self.agents[j].conversation.is_some()) {
                    out.error(&name, "target_busy", format!("{target} is already in a conversation"));
                    self.agents[i].busy_until = now + 1;
                } else {
                    self.open_conversation(me, target, now, out);
                }
            }
        }
    }

    fn agent_index(&self, name: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.id().as_str() == name)
    }

    fn is_agent(&self, name: &str) -> bool {
        self.agent_index(name).is_some()
    }

    fn open_conversation(
        &mut self,
        initiator: EntityId,
        partner: EntityId,
        now: u64,
        out: &mut TickLog,
    ) -> Option<ConversationId> {
        let id = ConversationId(self.next_conversation);
        let conv = match Conversation::open(id, initiator.clone(), partner.clone(), self.config.max_turns, now) {
            Ok(c) => c,
            Err(e) => {
                out.error(initiator.as_str(), "conversation_failed", e);
                return None;
            }
        };
        self.next_conversation += 1;
        for (who, other) in [(&initiator, &partner), (&partner, &initiator)] {
            if let Some(j) = self.agent_index(who.as_str()) {
                let a = &mut self.agents[j];
                a.conversation = Some(id);
                a.activity = Some(Activity {
                    kind: ActionKind::TalkTo,
                    target: Some(ActionTarget::Entity(other.clone())),
                    started: now,
                    destination: None,
                });
            }
        }
        out.push(
            WORLD_ACTOR,
            Category::Event,
            json!({
                "kind": "conversation_opened",
                "conversation": id.0,
                "participants": [initiator.as_str(), partner.as_str()],
            }),
        );
        self.conversations.insert(id, conv);
        Some(id)
    }

    fn close_conversation(&mut self, id: ConversationId, reason: CloseReason, now: u64, out: &mut TickLog) {
        let Some(mut conv) = self.conversations.remove(&id) else {
            return;
        };
        conv.close(reason);
        let reason = match conv.state() {
            ConversationState::Closed(r) => r,
            ConversationState::Open => reason,
        };
        for who in conv.participants() {
            if let Some(j) = self.agent_index(who.as_str()) {
                let a = &mut self.agents[j];
                a.conversation = None;
                a.activity = None;
                a.busy_until = now + 1;
            }
        }
        let [a, b] = conv.participants();
        out.push(
            WORLD_ACTOR,
            Category::Event,
            json!({
                "kind": "conversation_closed",
                "conversation": id.0,
                "participants": [a.as_str(), b.as_str()],
                "reason": reason.as_str(),
                "turns": conv.turns().len(),
            }),
        );
        self.closed.push(conv);
    }

    fn conversation_turn(&mut self, id: ConversationId, now: u64, events: &[WorldEvent], out: &mut TickLog) {
        let Some(conv) = self.conversations.get(&id) else {
            return;
        };
        let speaker = conv.next_speaker().clone();
        let Some(k) = self.agent_index(speaker.as_str()) else {
            // Waiting on a human: take a reply addressed to the partner, if any.
            let partner = conv.partner_of(&speaker).cloned().unwrap_or_else(|| speaker.clone());
            let reply = events.iter().find(|e| {
                e.kind == EventKind::Utterance
                    && e.source.as_deref() == Some(speaker.as_str())
                    && e.target.as_ref() == Some(&partner)
            });
            match reply {
                Some(e) => {
                    let text = e.payload.clone().unwrap_or_default();
                    if let Some(c) = self.conversations.get_mut(&id) {
                        let _ = c.add_turn(&speaker, text.clone(), now);
                    }
                    if let Some(j) = self.agent_index(partner.as_str()) {
                        self.record_memory(j, now, MemoryKind::Speech, format!("{speaker} said to me: \"{text}\""));
                    }
                    if self.conversations.get(&id).is_some_and(|c| !c.is_open()) {
                        self.close_conversation(id, CloseReason::MaxTurns, now, out);
                    } else {
                        self.conversation_turn(id, now, &[], out);
                    }
                }
                None if now.saturating_sub(conv.last_activity()) >= self.config.reply_timeout => {
                    self.close_conversation(id, CloseReason::NoReply, now, out);
                }
                None => {}
            }
            return;
        };

        let partner = conv.partner_of(&speaker).cloned().unwrap_or_else(|| speaker.clone());
        let history: Vec<Turn> = conv.turns().to_vec();
        let snapshot = self.world_snapshot();
        let result = compose_utterance(
            &mut self.agents[k],
            &partner,
            &history,
            &snapshot,
            &mut *self.backend,
            &self.config.mind,
            &self.embedder,
        );
        let name = speaker.as_str().to_owned();
        match result {
            Ok(u) => {
                let a = &mut self.agents[k];
                a.somatic = update_somatic(a.somatic, ActionKind::TalkTo, 1);
                if u.text.is_empty() {
                    out.push(
                        &name,
                        Category::Speech,
                        json!({"text": "", "conversation": id.0, "target": partner.as_str(), "ends": true}),
                    );
                } else {
                    if let Some(c) = self.conversations.get_mut(&id) {
                        let _ = c.add_turn(&speaker, u.text.clone(), now);
                    }
                    out.push(
                        &name,
                        Category::Speech,
                        json!({
                            "text": u.text,
                            "conversation": id.0,
                            "target": partner.as_str(),
                            "ends": u.ends,
                        }),
                    );
                    self.record_memory(k, now, MemoryKind::Speech, format!("I said to {partner}: \"{}\"", u.text));
                    if let Some(j) = self.agent_index(partner.as_str()) {
                        self.record_memory(j, now, MemoryKind::Speech, format!("{speaker} said to me: \"{}\"", u.text));
                    }
                }
                let still_open = self.conversations.get(&id).is_some_and(Conversation::is_open);
                if u.ends {
                    self.close_conversation(id, CloseReason::EndMarker, now, out);
                } else if !still_open {
                    self.close_conversation(id, CloseReason::MaxTurns, now, out);
                }
            }
            Err(e) => {
                let mut m = error_payload(speech_error_code(&e), &e.to_string());
                m.insert("conversation".into(), json!(id.0));
                out.push(&name, Category::Error, Value::Object(m));
                let failures = self.conversations.get_mut(&id).map_or(0, |c| {
                    c.failures += 1;
                    c.failures
                });
                if failures >= 2 {
                    self.close_conversation(id, CloseReason::BackendFailures, now, out);
                }
            }
        }
    }
}

fn speech_error_code(e: &MindError) -> &'static str {
    match e {
        MindError::Backend(_) => "backend_error",
        _ => "speech_failed",
    }
}
