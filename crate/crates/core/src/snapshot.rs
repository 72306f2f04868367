//! Public view of a running session, as served to observers. Memories stay
//! private; only what an onlooker could see is included.

use serde::{Deserialize, Serialize};

use crate::mind::TirednessBucket;
use crate::sim::Simulation;
use crate::world::{Phase, Point, Posture, TerrainGrid};

/// Terrain averaged over `factor`×`factor` blocks, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainView {
    pub width: usize,
    pub height: usize,
    pub factor: usize,
    pub cells: Vec<f64>,
}

impl TerrainView {
    pub fn downsample(grid: &TerrainGrid, factor: usize) -> Self {
        let factor = factor.max(1);
        let width = grid.width().div_ceil(factor);
        let height = grid.height().div_ceil(factor);
        let mut cells = Vec::with_capacity(width * height);
        for by in 0..height {
            for bx in 0..width {
                let (mut sum, mut n) = (0.0, 0usize);
                for y in by * factor..((by + 1) * factor).min(grid.height()) {
                    for x in bx * factor..((bx + 1) * factor).min(grid.width()) {
                        sum += grid.get(x, y).unwrap_or_default();
                        n += 1;
                    }
                }
                cells.push(sum / n as f64);
            }
        }
        Self {
            width,
            height,
            factor,
            cells,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub name: String,
    pub position: Point,
    pub posture: Posture,
    /// Current action, if any.
    pub action: Option<String>,
    pub tiredness: TirednessBucket,
    pub conversation: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnView {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationView {
    pub id: u64,
    pub participants: [String; 2],
    pub last_turn: Option<TurnView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub tick: u64,
    pub phase: Phase,
    pub terrain: TerrainView,
    pub agents: Vec<AgentView>,
    pub conversations: Vec<ConversationView>,
}

impl StateSnapshot {
    pub fn capture(sim: &Simulation, factor: usize) -> Self {
        let clock = sim.clock();
        let agents = sim
            .agents()
            .iter()
            .map(|a| AgentView {
                name: a.id().as_str().to_owned(),
                position: a.pose.position,
                posture: a.pose.posture,
                action: a.activity.as_ref().map(|act| act.kind.name().to_owned()),
                tiredness: a.somatic.bucket(),
                conversation: a.conversation.map(|c| c.0),
            })
            .collect();
        let conversations = sim
            .open_conversations()
            .map(|c| {
                let [a, b] = c.participants();
                ConversationView {
                    id: c.id.0,
                    participants: [a.as_str().to_owned(), b.as_str().to_owned()],
                    last_turn: c.turns().last().map(|t| TurnView {
                        speaker: t.speaker.as_str().to_owned(),
                        text: t.text.clone(),
                    }),
                }
            })
            .collect();
        Self {
            tick: clock.tick(),
            phase: clock.phase(),
            terrain: TerrainView::downsample(sim.grid(), factor),
            agents,
            conversations,
        }
    }
}
