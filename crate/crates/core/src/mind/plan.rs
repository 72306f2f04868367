//! Plans and their text format.
//!
//! Backends answer planning prompts with one `goal:` line and one `step:`
//! line per step:
//!
//! ```text
//! goal: find out why the ground shakes
//! step: go_to 12 30 | walk down to the shore
//! step: pile_up_sand | heap up a mound and watch it
//! step: talk_to boy | ask the boy what he felt
//! ```
//!
//! A step names a catalogue action, then its target (coordinates for
//! `go_to`/`pile_up_sand`, a name for `talk_to`), then `|` and a description.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{ActionKind, ActionTarget};
use crate::world::{EntityId, Point};

pub const MIN_PLAN_STEPS: usize = 2;
pub const MAX_PLAN_STEPS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub description: String,
    pub action: ActionKind,
    pub target: Option<ActionTarget>,
}

impl PlanStep {
    pub fn render(&self) -> String {
        match &self.target {
            Some(t) => format!("{} {} | {}", self.action, t, self.description),
            None => format!("{} | {}", self.action, self.description),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub goal: String,
    pub steps: Vec<PlanStep>,
    pub cursor: usize,
}

impl Plan {
    pub fn is_active(&self) -> bool {
        self.cursor < self.steps.len()
    }

    pub fn current_step(&self) -> Option<&PlanStep> {
        self.steps.get(self.cursor)
    }

    /// Moves past the current step when `kind` carries it out.
    pub fn advance_on(&mut self, kind: ActionKind) -> bool {
        if self.current_step().is_some_and(|s| s.action == kind) {
            self.cursor += 1;
            true
        } else {
            false
        }
    }

    pub fn summary(&self) -> String {
        let steps: Vec<String> = self.steps.iter().map(|s| s.description.clone()).collect();
        format!("My goal: {}. My plan: {}.", self.goal, steps.join("; "))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("plan has no goal line")]
    MissingGoal,
    #[error("plan needs {min}..={max} steps, got {got}")]
    StepCount { got: usize, min: usize, max: usize },
    #[error("step names '{0}', which is not a catalogue action")]
    UnmappableStep(String),
    #[error("step '{0}' has an unusable target")]
    InvalidTarget(String),
}

/// Goal (if stated) and steps parsed from a planning reply.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanText {
    pub goal: Option<String>,
    pub steps: Vec<PlanStep>,
}

fn strip_prefix_ci<'a>(line: &'a str, prefix: &str) -> Option<&'a str> {
    let head = line.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| line[prefix.len()..].trim())
}

fn parse_point(tokens: &[&str]) -> Option<Point> {
    let joined = tokens.join(" ");
    let nums: Vec<f64> = joined
        .split(|c: char| c == ',' || c.is_whitespace() || c == '(' || c == ')')
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect::<Result<_, _>>()
        .ok()?;
    match nums[..] {
        [x, y] if x.is_finite() && y.is_finite() => Some(Point::new(x, y)),
        _ => None,
    }
}

fn parse_step(body: &str) -> Result<PlanStep, PlanError> {
    let (head, description) = match body.split_once('|') {
        Some((h, d)) => (h.trim(), d.trim()),
        None => (body.trim(), ""),
    };
    let mut tokens = head.split_whitespace();
    let name = tokens.next().unwrap_or_default();
    let action = ActionKind::from_name(name).map_err(|_| PlanError::UnmappableStep(name.to_owned()))?;
    let rest: Vec<&str> = tokens.collect();
    let target = match action {
        ActionKind::GoTo => Some(ActionTarget::Point(
            parse_point(&rest).ok_or_else(|| PlanError::InvalidTarget(head.to_owned()))?,
        )),
        ActionKind::PileUpSand if rest.is_empty() => None,
        ActionKind::PileUpSand => Some(ActionTarget::Point(
            parse_point(&rest).ok_or_else(|| PlanError::InvalidTarget(head.to_owned()))?,
        )),
        ActionKind::TalkTo => match rest[..] {
            [who] => Some(ActionTarget::Entity(EntityId::new(who))),
            _ => return Err(PlanError::InvalidTarget(head.to_owned())),
        },
        _ if rest.is_empty() => None,
        _ => return Err(PlanError::InvalidTarget(head.to_owned())),
    };
    let description = if description.is_empty() {
        action.description().to_owned()
    } else {
        description.to_owned()
    };
    Ok(PlanStep {
        description,
        action,
        target,
    })
}

/// Parses `goal:` and `step:` lines; other lines are ignored.
pub fn parse_plan(text: &str) -> Result<PlanText, PlanError> {
    let mut goal = None;
    let mut steps = Vec::new();
    for line in text.lines().map(str::trim) {
        if let Some(g) = strip_prefix_ci(line, "goal:") {
            if !g.is_empty() {
                goal = Some(g.to_owned());
            }
        } else if let Some(s) = strip_prefix_ci(line, "step:") {
            steps.push(parse_step(s)?);
        }
    }
    Ok(PlanText { goal, steps })
}
