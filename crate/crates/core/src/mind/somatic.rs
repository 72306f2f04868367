use serde::{Deserialize, Serialize};

use crate::action::ActionKind;

/// Bodily state of an agent. Only tiredness is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SomaticState {
    tiredness: f64,
}

impl SomaticState {
    pub fn new(tiredness: f64) -> Self {
        let tiredness = if tiredness.is_nan() { 0.0 } else { tiredness.clamp(0.0, 1.0) };
        Self { tiredness }
    }

    pub fn tiredness(&self) -> f64 {
        self.tiredness
    }

    pub fn bucket(&self) -> TirednessBucket {
        TirednessBucket::of(self.tiredness)
    }

    pub fn descriptor(&self) -> &'static str {
        self.bucket().descriptor()
    }
}

impl Default for SomaticState {
    fn default() -> Self {
        Self::new(0.2)
    }
}

/// Tiredness change per tick spent on `kind`.
pub fn tiredness_rate(kind: ActionKind) -> f64 {
    match kind {
        ActionKind::Rest => -0.01,
        ActionKind::TakeNap => -0.03,
        ActionKind::SitDown => -0.005,
        ActionKind::Wait => -0.002,
        ActionKind::Dance => 0.02,
        ActionKind::PileUpSand => 0.015,
        ActionKind::Wander | ActionKind::GoTo => 0.01,
        _ => 0.002,
    }
}

#[must_use]
pub fn update_somatic(somatic: SomaticState, kind: ActionKind, duration_ticks: u64) -> SomaticState {
    if duration_ticks == 0 {
        return somatic;
    }
    SomaticState::new(somatic.tiredness + tiredness_rate(kind) * duration_ticks as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TirednessBucket {
    Rested,
    Weary,
    Tired,
    Exhausted,
}

impl TirednessBucket {
    pub const LOW: f64 = 0.33;
    pub const MID: f64 = 0.66;
    pub const HIGH: f64 = 0.85;

    pub fn of(tiredness: f64) -> Self {
        if tiredness < Self::LOW {
            TirednessBucket::Rested
        } else if tiredness < Self::MID {
            TirednessBucket::Weary
        } else if tiredness < Self::HIGH {
            TirednessBucket::Tired
        } else {
            TirednessBucket::Exhausted
        }
    }

    pub fn descriptor(self) -> &'static str {
        match self {
            TirednessBucket::Rested => "You feel rested and alert.",
            TirednessBucket::Weary => "You feel a little weary.",
            TirednessBucket::Tired => "You feel tired and your limbs are heavy.",
            TirednessBucket::Exhausted => "You are exhausted and can barely keep going.",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TirednessBucket::Rested => "rested",
            TirednessBucket::Weary => "weary",
            TirednessBucket::Tired => "tired",
            TirednessBucket::Exhausted => "exhausted",
        }
    }
}
