//! Scenario files (TOML): world size and terrain, roster, thresholds, script
//! path and optional timed inputs.
//!
//! ```toml
//! name = "shore"
//! participants = ["visitor"]
//! script = "shore.script.jsonl"
//!
//! [world]
//! width = 32
//! height = 32
//!
//! [world.terrain]
//! base = 0.2
//! mounds = [{ x = 10, y = 12, radius = 5.0, height = 0.4 }]
//!
//! [[agents]]
//! name = "woman"
//! disposition = "She is patient."
//! speech_style = "few words"
//! position = [10.5, 12.5]
//!
//! [[schedule]]
//! tick = 40
//! kind = "utterance"
//! speaker = "visitor"
//! text = "hello"
//! ```
//!
//! Every table and field other than the agent list has a default.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::memory::{MemoryStore, RetrievalWeights, Scoring};
use crate::mind::Persona;
use crate::sim::ParticipantInput;
use crate::world::{CellRegion, Point, TerrainGrid, WorldError};

pub const DEFAULT_SCENARIO_NAME: &str = "default";
const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.toml");
const DEFAULT_SCRIPT: &str = include_str!("../scenarios/default.script.jsonl");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario is not valid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mound {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainSpec {
    pub base: f64,
    pub mounds: Vec<Mound>,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        Self {
            base: 0.2,
            mounds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub width: usize,
    pub height: usize,
    pub ticks_per_day: u64,
    pub tremor_threshold: f64,
    pub perception_radius: f64,
    /// Cells an agent moves per tick.
    pub speed: f64,
    /// Where untargeted participant speech is heard from; whole grid if absent.
    pub microphone: Option<CellRegion>,
    pub terrain: TerrainSpec,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            ticks_per_day: 400,
            tremor_threshold: 0.5,
            perception_radius: 10.0,
            speed: 1.0,
            microphone: None,
            terrain: TerrainSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySpec {
    pub dimension: usize,
    pub half_life: f64,
    /// Recency, importance and relevance weights.
    pub weights: [f64; 3],
    pub reflection_threshold: u32,
    pub retrieval_k: usize,
    /// Ticks to wait before retrying a failed automatic reflection.
    pub reflection_cooldown: u64,
}

impl Default for MemorySpec {
    fn default() -> Self {
        Self {
            dimension: MemoryStore::DEFAULT_DIMENSION,
            half_life: Scoring::DEFAULT_HALF_LIFE,
            weights: [1.0 / 3.0; 3],
            reflection_threshold: 50,
            retrieval_k: 8,
            reflection_cooldown: 20,
        }
    }
}

impl MemorySpec {
    pub fn scoring(&self) -> Result<Scoring, ScenarioError> {
        let [r, i, v] = self.weights;
        let weights = RetrievalWeights::new(r, i, v).map_err(|e| invalid(e.to_string()))?;
        Scoring::new(weights, self.half_life).map_err(|e| invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConversationSpec {
    pub max_turns: usize,
    /// Ticks an agent waits for a human's reply before giving up.
    pub reply_timeout: u64,
}

impl Default for ConversationSpec {
    fn default() -> Self {
        Self {
            max_turns: 8,
            reply_timeout: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySpec {
    pub token_budget: usize,
    pub max_attempts: u32,
}

impl Default for GatewaySpec {
    fn default() -> Self {
        Self {
            token_budget: 2048,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    #[serde(default)]
    pub disposition: String,
    #[serde(default)]
    pub speech_style: String,
    pub position: [f64; 2],
    #[serde(default)]
    pub tiredness: Option<f64>,
}

impl AgentSpec {
    pub fn persona(&self) -> Persona {
        Persona {
            name: self.name.clone(),
            disposition: self.disposition.clone(),
            speech_style: self.speech_style.clone(),
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.position[0], self.position[1])
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScheduledInput {
    pub tick: u64,
    #[serde(flatten)]
    pub input: ParticipantInput,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_participants")]
    pub participants: Vec<String>,
    /// Script for the scripted backend, relative to the scenario file.
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub world: WorldSpec,
    #[serde(default)]
    pub memory: MemorySpec,
    #[serde(default)]
    pub conversation: ConversationSpec,
    #[serde(default)]
    pub gateway: GatewaySpec,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub schedule: Vec<ScheduledInput>,
    /// Script text bundled with a built-in scenario.
    #[serde(skip)]
    pub embedded_script: Option<&'static str>,
}

fn default_name() -> String {
    "unnamed".to_owned()
}

fn default_participants() -> Vec<String> {
    vec!["visitor".to_owned()]
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.check()?;
        Ok(s)
    }

    /// Loads a file, resolving a relative script path against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut s = Self::parse(&text)?;
        if let Some(script) = &s.script {
            if script.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                s.script = Some(base.join(script));
            }
        }
        Ok(s)
    }

    /// The built-in three-agent scenario and its script.
    pub fn builtin_default() -> Self {
        let mut s = Self::parse(DEFAULT_SCENARIO).expect("built-in scenario is valid");
        s.script = None;
        s.embedded_script = Some(DEFAULT_SCRIPT);
        s
    }

    /// `default` names the built-in scenario; anything else is a file path.
    pub fn load(name_or_path: &str) -> Result<Self, ScenarioError> {
        if name_or_path == DEFAULT_SCENARIO_NAME {
            Ok(Self::builtin_default())
        } else {
            Self::from_file(name_or_path)
        }
    }

    fn check(&self) -> Result<(), ScenarioError> {
        let w = &self.world;
        if w.width == 0 || w.height == 0 {
            return Err(invalid("world must have at least one cell"));
        }
        if w.ticks_per_day == 0 {
            return Err(invalid("ticks_per_day must be positive"));
        }
        if !(w.speed.is_finite() && w.speed > 0.0) {
            return Err(invalid("speed must be positive"));
        }
        if !(w.perception_radius.is_finite() && w.perception_radius >= 0.0) {
            return Err(invalid("perception_radius must be non-negative"));
        }
        if !(w.tremor_threshold.is_finite() && w.tremor_threshold >= 0.0) {
            return Err(invalid("tremor_threshold must be non-negative"));
        }
        if !(0.0..=1.0).contains(&w.terrain.base) {
            return Err(invalid("terrain base must be in [0, 1]"));
        }
        if let Some(m) = &w.microphone {
            if m.width == 0 || m.height == 0 || !m.fits(w.width, w.height) {
                return Err(invalid(format!("microphone region {m} is off the grid")));
            }
        }
        if self.conversation.max_turns == 0 {
            return Err(invalid("max_turns must be positive"));
        }
        if self.memory.dimension == 0 {
            return Err(invalid("memory dimension must be positive"));
        }
        self.memory.scoring()?;
        let grid = TerrainGrid::filled(w.width, w.height, 0.0)?;
        let mut names: Vec<&str> = Vec::new();
        for a in &self.agents {
            if a.name.trim().is_empty() || a.name.contains(char::is_whitespace) {
                return Err(invalid(format!("agent name '{}' must be one non-empty word", a.name)));
            }
            if names.contains(&a.name.as_str()) || self.participants.contains(&a.name) {
                return Err(invalid(format!("name '{}' is used twice", a.name)));
            }
            names.push(&a.name);
            if !grid.contains_point(a.position()) {
                return Err(invalid(format!("agent '{}' starts off the grid", a.name)));
            }
        }
        Ok(())
    }

    pub fn terrain(&self) -> Result<TerrainGrid, ScenarioError> {
        let w = &self.world;
        let mut cells = vec![w.terrain.base; w.width * w.height];
        for m in &w.terrain.mounds {
            if m.radius.is_nan() || m.radius <= 0.0 {
                continue;
            }
            for y in 0..w.height {
                for x in 0..w.width {
                    let d = Point::new(x as f64 + 0.5, y as f64 + 0.5).distance(Point::new(m.x, m.y));
                    let f = (1.0 - d / m.radius).max(0.0);
                    cells[y * w.width + x] += m.height * f * f;
                }
            }
        }
        for c in &mut cells {
            *c = c.clamp(0.0, 1.0);
        }
        Ok(TerrainGrid::from_cells(w.width, w.height, cells)?)
    }

    pub fn microphone(&self) -> CellRegion {
        self.world
            .microphone
            .unwrap_or(CellRegion::new(0, 0, self.world.width, self.world.height))
    }

    /// Script text, read from disk or taken from the built-in bundle.
    pub fn script_text(&self) -> Result<Option<String>, ScenarioError> {
        if let Some(path) = &self.script {
            return std::fs::read_to_string(path)
                .map(Some)
                .map_err(|source| ScenarioError::Io {
                    path: path.clone(),
                    source,
                });
        }
        Ok(self.embedded_script.map(str::to_owned))
    }
}
