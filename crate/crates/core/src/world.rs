//! The sandtable: terrain grid, world clock, entity poses and the events
//! derived from participant input.
//!
//! All mutation happens inside the orchestrator's tick. [`WorldSnapshot`] is an
//! owned copy and can be handed to other threads freely.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack used when deciding that a moving entity has arrived.
pub const ARRIVAL_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("grid dimensions must be at least 1x1, got {width}x{height}")]
    EmptyGrid { width: usize, height: usize },
    #[error("elevation {value} at cell {index} is outside [0, 1]")]
    ElevationOutOfRange { index: usize, value: f64 },
    #[error("expected {expected} cells, got {actual}")]
    CellCountMismatch { expected: usize, actual: usize },
    #[error("region {region} is outside the {width}x{height} grid")]
    RegionOutOfBounds {
        region: CellRegion,
        width: usize,
        height: usize,
    },
    #[error("edit delta must be finite, got {0}")]
    NonFiniteDelta(f64),
    #[error("shadow mask is {mask_width}x{mask_height}, grid is {width}x{height}")]
    MaskDimensionMismatch {
        mask_width: usize,
        mask_height: usize,
        width: usize,
        height: usize,
    },
    #[error("unknown entity '{0}'")]
    UnknownEntity(EntityId),
    #[error("ticks_per_day must be positive")]
    ZeroDayLength,
}

/// Identifier of an agent or a human participant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(String);

impl EntityId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Half-open rectangle of cells: columns `x..x+width`, rows `y..y+height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRegion {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl CellRegion {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub const fn cell(x: usize, y: usize) -> Self {
        Self::new(x, y, 1, 1)
    }

    /// Square of `2 * half + 1` cells centred on `(cx, cy)`, clipped to the grid.
    pub fn around(cx: usize, cy: usize, half: usize, grid_width: usize, grid_height: usize) -> Self {
        let x0 = cx.saturating_sub(half);
        let y0 = cy.saturating_sub(half);
        let x1 = (cx + half + 1).min(grid_width);
        let y1 = (cy + half + 1).min(grid_height);
        Self::new(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }

    pub fn fits(&self, grid_width: usize, grid_height: usize) -> bool {
        self.width > 0
            && self.height > 0
            && self.x.checked_add(self.width).is_some_and(|e| e <= grid_width)
            && self.y.checked_add(self.height).is_some_and(|e| e <= grid_height)
    }

    pub fn contains_cell(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y..self.y + self.height).flat_map(move |y| (self.x..self.x + self.width).map(move |x| (x, y)))
    }

    /// Euclidean distance from `p` to the nearest point of the region's area.
    pub fn distance_to(&self, p: Point) -> f64 {
        let x0 = self.x as f64;
        let y0 = self.y as f64;
        let x1 = (self.x + self.width) as f64;
        let y1 = (self.y + self.height) as f64;
        let dx = (x0 - p.x).max(0.0).max(p.x - x1);
        let dy = (y0 - p.y).max(0.0).max(p.y - y1);
        (dx * dx + dy * dy).sqrt()
    }
}

impl fmt::Display for CellRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{} {}x{}]", self.x, self.y, self.width, self.height)
    }
}

/// Normalized elevation field, row-major, every cell in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainGrid {
    width: usize,
    height: usize,
    cells: Vec<f64>,
}

impl TerrainGrid {
    pub fn filled(width: usize, height: usize, level: f64) -> Result<Self, WorldError> {
        Self::from_cells(width, height, vec![level; width * height])
    }

    pub fn from_cells(width: usize, height: usize, cells: Vec<f64>) -> Result<Self, WorldError> {
        if width == 0 || height == 0 {
            return Err(WorldError::EmptyGrid { width, height });
        }
        if cells.len() != width * height {
            return Err(WorldError::CellCountMismatch {
                expected: width * height,
                actual: cells.len(),
            });
        }
        if let Some((index, &value)) = cells
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(WorldError::ElevationOutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            cells,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        (x < self.width && y < self.height).then(|| self.cells[y * self.width + x])
    }

    pub fn contains_point(&self, p: Point) -> bool {
        p.x.is_finite()
            && p.y.is_finite()
            && p.x >= 0.0
            && p.y >= 0.0
            && p.x < self.width as f64
            && p.y < self.height as f64
    }

    /// Cell containing `p`, clamped into the grid.
    pub fn cell_of(&self, p: Point) -> (usize, usize) {
        let cx = (p.x.max(0.0).floor() as usize).min(self.width - 1);
        let cy = (p.y.max(0.0).floor() as usize).min(self.height - 1);
        (cx, cy)
    }

    /// Shifts every cell in `region` by `delta`, clamping to `[0, 1]`.
    ///
    /// Returns the total absolute change actually applied, which is what
    /// tremor detection works from.
    pub fn apply_edit(&mut self, region: CellRegion, delta: f64) -> Result<f64, WorldError> {
        if !delta.is_finite() {
            return Err(WorldError::NonFiniteDelta(delta));
        }
        if !region.fits(self.width, self.height) {
            return Err(WorldError::RegionOutOfBounds {
                region,
                width: self.width,
                height: self.height,
            });
        }
        let mut total_change = 0.0;
        for (x, y) in region.cells() {
            let cell = &mut self.cells[y * self.width + x];
            let old = *cell;
            let new = (old + delta).clamp(0.0, 1.0);
            *cell = new;
            total_change += (new - old).abs();
        }
        Ok(total_change)
    }

    /// Mean elevation over the cells whose centres lie within `radius` of `p`.
    pub fn local_mean(&self, p: Point, radius: f64) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (x, y) in self.cells_within(p, radius) {
            sum += self.cells[y * self.width + x];
            n += 1;
        }
        if n == 0 {
            let (cx, cy) = self.cell_of(p);
            return self.cells[cy * self.width + cx];
        }
        sum / n as f64
    }

    /// Cells whose centres are within `radius` of `p`, row-major.
    pub fn cells_within(&self, p: Point, radius: f64) -> Vec<(usize, usize)> {
        let r = radius.max(0.0);
        let x0 = (p.x - r).floor().max(0.0) as usize;
        let y0 = (p.y - r).floor().max(0.0) as usize;
        let x1 = ((p.x + r).ceil().max(0.0) as usize).min(self.width - 1);
        let y1 = ((p.y + r).ceil().max(0.0) as usize).min(self.height - 1);
        let mut out = Vec::new();
        for y in y0..=y1 {
            for x in x0..=x1 {
                let centre = Point::new(x as f64 + 0.5, y as f64 + 0.5);
                if centre.distance(p) <= r {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Dawn,
    Day,
    Dusk,
    Night,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Dawn => "dawn",
            Phase::Day => "day",
            Phase::Dusk => "dusk",
            Phase::Night => "night",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldClock {
    tick: u64,
    ticks_per_day: u64,
}

impl WorldClock {
    pub fn new(tick: u64, ticks_per_day: u64) -> Result<Self, WorldError> {
        if ticks_per_day == 0 {
            return Err(WorldError::ZeroDayLength);
        }
        Ok(Self {
            tick,
            ticks_per_day,
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn ticks_per_day(&self) -> u64 {
        self.ticks_per_day
    }

    /// Day is split into four equal quarters: dawn, day, dusk, night.
    pub fn phase(&self) -> Phase {
        let within = self.tick % self.ticks_per_day;
        match (within as u128 * 4 / self.ticks_per_day as u128) as u8 {
            0 => Phase::Dawn,
            1 => Phase::Day,
            2 => Phase::Dusk,
            _ => Phase::Night,
        }
    }

    #[must_use]
    pub fn advance(self) -> Self {
        Self {
            tick: self.tick + 1,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Posture {
    Standing,
    Sitting,
    Napping,
}

impl Posture {
    pub fn as_str(self) -> &'static str {
        match self {
            Posture::Standing => "standing",
            Posture::Sitting => "sitting",
            Posture::Napping => "napping",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityPose {
    pub entity_id: EntityId,
    pub position: Point,
    pub posture: Posture,
}

impl EntityPose {
    pub fn new(entity_id: impl Into<EntityId>, position: Point) -> Self {
        Self {
            entity_id: entity_id.into(),
            position,
            posture: Posture::Standing,
        }
    }
}

impl From<String> for EntityId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Tremor,
    Shadow,
    Utterance,
    Ambient,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Tremor => "tremor",
            EventKind::Shadow => "shadow",
            EventKind::Utterance => "utterance",
            EventKind::Ambient => "ambient",
        }
    }
}

/// Something that happened in the world during a tick.
///
/// `source` names whoever caused the event (a speaker label, a whistling
/// agent); `target` is the addressee of a directed utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldEvent {
    pub kind: EventKind,
    pub magnitude: f64,
    pub region: CellRegion,
    pub tick: u64,
    pub payload: Option<String>,
    pub source: Option<String>,
    pub target: Option<EntityId>,
}

impl WorldEvent {
    pub fn shadow(region: CellRegion, tick: u64) -> Self {
        Self {
            kind: EventKind::Shadow,
            magnitude: 1.0,
            region,
            tick,
            payload: None,
            source: None,
            target: None,
        }
    }

    /// Returns `None` for an empty transcript.
    pub fn utterance(
        speaker: impl Into<String>,
        text: impl Into<String>,
        target: Option<EntityId>,
        region: CellRegion,
        tick: u64,
    ) -> Option<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return None;
        }
        Some(Self {
            kind: EventKind::Utterance,
            magnitude: 1.0,
            region,
            tick,
            payload: Some(text),
            source: Some(speaker.into()),
            target,
        })
    }

    pub fn ambient(
        source: impl Into<String>,
        description: impl Into<String>,
        audible_radius: f64,
        region: CellRegion,
        tick: u64,
    ) -> Self {
        Self {
            kind: EventKind::Ambient,
            magnitude: audible_radius.max(0.0),
            region,
            tick,
            payload: Some(description.into()),
            source: Some(source.into()),
            target: None,
        }
    }
}

/// Emits a tremor when an edit moved strictly more sand than `threshold`.
pub fn detect_tremor(total_change: f64, threshold: f64, region: CellRegion, tick: u64) -> Option<WorldEvent> {
    (total_change > threshold && total_change > 0.0).then_some(WorldEvent {
        kind: EventKind::Tremor,
        magnitude: total_change,
        region,
        tick,
        payload: None,
        source: None,
        target: None,
    })
}

/// Boolean occlusion mask over the grid; `true` means a hand is overhead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadowMask {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl ShadowMask {
    pub fn clear(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: vec![false; width * height],
        }
    }

    pub fn set(&mut self, x: usize, y: usize, covered: bool) {
        if x < self.width && y < self.height {
            self.cells[y * self.width + x] = covered;
        }
    }

    pub fn is_covered(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.cells.get(y * self.width + x).copied().unwrap_or(false)
    }
}

/// One shadow event per posed entity standing in a covered cell, in pose order.
pub fn detect_shadow(
    mask: &ShadowMask,
    grid: &TerrainGrid,
    poses: &[EntityPose],
    tick: u64,
) -> Result<Vec<WorldEvent>, WorldError> {
    if mask.width != grid.width()
        || mask.height != grid.height()
        || mask.cells.len() != mask.width * mask.height
    {
        return Err(WorldError::MaskDimensionMismatch {
            mask_width: mask.width,
            mask_height: mask.height,
            width: grid.width(),
            height: grid.height(),
        });
    }
    Ok(poses
        .iter()
        .filter_map(|pose| {
            let (cx, cy) = grid.cell_of(pose.position);
            mask.is_covered(cx, cy)
                .then(|| WorldEvent::shadow(CellRegion::cell(cx, cy), tick))
        })
        .collect())
}

/// Entities within `radius` of `subject`, nearest first, ties by id.
pub fn nearby_entities(poses: &[EntityPose], subject: &EntityId, radius: f64) -> Result<Vec<EntityId>, WorldError> {
    let origin = poses
        .iter()
        .find(|p| &p.entity_id == subject)
        .ok_or_else(|| WorldError::UnknownEntity(subject.clone()))?
        .position;
    let mut found: Vec<(f64, &EntityId)> = poses
        .iter()
        .filter(|p| &p.entity_id != subject)
        .map(|p| (origin.distance(p.position), &p.entity_id))
        .filter(|(d, _)| *d <= radius)
        .collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(found.into_iter().map(|(_, id)| id.clone()).collect())
}

/// Moves `pose` toward `target` by at most `speed`, snapping on arrival.
pub fn step_towards(pose: &EntityPose, target: Point, speed: f64) -> EntityPose {
    let remaining = pose.position.distance(target);
    let position = if remaining <= speed + ARRIVAL_EPSILON {
        target
    } else {
        let f = speed / remaining;
        Point::new(
            pose.position.x + (target.x - pose.position.x) * f,
            pose.position.y + (target.y - pose.position.y) * f,
        )
    };
    EntityPose {
        position,
        ..pose.clone()
    }
}

/// Number of `step_towards` calls needed to cover `distance`.
pub fn travel_ticks(distance: f64, speed: f64) -> u64 {
    if distance <= ARRIVAL_EPSILON {
        return 1;
    }
    let steps = ((distance - ARRIVAL_EPSILON) / speed).ceil();
    (steps as u64).max(1)
}

/// Immutable copy of the observable world at the end of a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub clock: WorldClock,
    pub grid: TerrainGrid,
    pub poses: Vec<EntityPose>,
}

impl WorldSnapshot {
    pub fn pose(&self, id: &EntityId) -> Option<&EntityPose> {
        self.poses.iter().find(|p| &p.entity_id == id)
    }
}
