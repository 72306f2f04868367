use std::collections::VecDeque;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{CellRegion, EntityId};

/// Largest elevation change a single participant edit may request.
pub const MAX_EDIT_DELTA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParticipantInput {
    TerrainEdit {
        region: CellRegion,
        delta: f64,
    },
    Utterance {
        speaker: String,
        text: String,
        #[serde(default)]
        target: Option<EntityId>,
    },
    /// Cells covered by a hand for one tick.
    Shadow {
        cells: Vec<(usize, usize)>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputOrigin {
    /// Arrived through the service while the session ran.
    Participant,
    /// Timed input from the scenario file.
    Schedule,
}

impl InputOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            InputOrigin::Participant => "participant",
            InputOrigin::Schedule => "schedule",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueuedInput {
    pub order: u64,
    pub origin: InputOrigin,
    pub input: ParticipantInput,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InputError {
    #[error("region {0} is empty or off the grid")]
    RegionOutOfBounds(CellRegion),
    #[error("delta {0} must be finite and within ±{MAX_EDIT_DELTA}")]
    BadDelta(f64),
    #[error("utterance text is empty")]
    EmptyText,
    #[error("speaker label is empty")]
    EmptySpeaker,
    #[error("no agent called {0}")]
    UnknownTarget(EntityId),
    #[error("shadow covers no cells")]
    EmptyShadow,
    #[error("shadow cell ({0}, {1}) is off the grid")]
    CellOutOfBounds(usize, usize),
}

#[derive(Debug, Default)]
struct Queue {
    items: VecDeque<QueuedInput>,
    next_order: u64,
}

/// FIFO of participant inputs, shared between the service and the tick loop.
/// Clones refer to the same queue.
#[derive(Debug, Clone)]
pub struct Inbox {
    queue: Arc<Mutex<Queue>>,
    width: usize,
    height: usize,
    agents: Arc<[EntityId]>,
}

/// Rounds to the six decimals the log keeps, so a logged edit replays exactly.
pub fn quantize_delta(delta: f64) -> f64 {
    (delta * 1e6).round() / 1e6
}

impl Inbox {
    pub fn new(width: usize, height: usize, agents: Vec<EntityId>) -> Self {
        Self {
            queue: Arc::new(Mutex::new(Queue {
                items: VecDeque::new(),
                next_order: 1,
            })),
            width,
            height,
            agents: agents.into(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Queue> {
        self.queue.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Checks and normalises an input without queueing it.
    pub fn check(&self, input: ParticipantInput) -> Result<ParticipantInput, InputError> {
        match input {
            ParticipantInput::TerrainEdit { region, delta } => {
                if region.width == 0 || region.height == 0 || !region.fits(self.width, self.height) {
                    return Err(InputError::RegionOutOfBounds(region));
                }
                if !delta.is_finite() || delta.abs() > MAX_EDIT_DELTA {
                    return Err(InputError::BadDelta(delta));
                }
                Ok(ParticipantInput::TerrainEdit {
                    region,
                    delta: quantize_delta(delta),
                })
            }
            ParticipantInput::Utterance { speaker, text, target } => {
                if text.trim().is_empty() {
                    return Err(InputError::EmptyText);
                }
                let speaker = speaker.trim().to_owned();
                if speaker.is_empty() {
                    return Err(InputError::EmptySpeaker);
                }
                if let Some(t) = &target {
                    if !self.agents.contains(t) {
                        return Err(InputError::UnknownTarget(t.clone()));
                    }
                }
                Ok(ParticipantInput::Utterance { speaker, text, target })
            }
            ParticipantInput::Shadow { mut cells } => {
                if cells.is_empty() {
                    return Err(InputError::EmptyShadow);
                }
                if let Some(&(x, y)) = cells.iter().find(|(x, y)| *x >= self.width || *y >= self.height) {
                    return Err(InputError::CellOutOfBounds(x, y));
                }
                cells.sort_unstable_by_key(|&(x, y)| (y, x));
                cells.dedup();
                Ok(ParticipantInput::Shadow { cells })
            }
        }
    }

    /// Queues a well-formed input and returns its arrival order.
    pub fn enqueue(&self, input: ParticipantInput) -> Result<u64, InputError> {
        self.enqueue_from(input, InputOrigin::Participant)
    }

    pub fn enqueue_from(&self, input: ParticipantInput, origin: InputOrigin) -> Result<u64, InputError> {
        let input = self.check(input)?;
        let mut q = self.lock();
        let order = q.next_order;
        q.next_order += 1;
        q.items.push_back(QueuedInput { order, origin, input });
        Ok(order)
    }

    /// Takes everything queued so far, oldest first.
    pub fn drain(&self) -> Vec<QueuedInput> {
        self.lock().items.drain(..).collect()
    }

    /// Takes everything queued so far, then appends `scheduled` with fresh
    /// orders, all under one lock so no participant input can slip between.
    pub fn drain_with(&self, scheduled: Vec<ParticipantInput>) -> Result<Vec<QueuedInput>, InputError> {
        let scheduled = scheduled
            .into_iter()
            .map(|i| self.check(i))
            .collect::<Result<Vec<_>, _>>()?;
        let mut q = self.lock();
        let mut out: Vec<QueuedInput> = q.items.drain(..).collect();
        for input in scheduled {
            let order = q.next_order;
            q.next_order += 1;
            out.push(QueuedInput {
                order,
                origin: InputOrigin::Schedule,
                input,
            });
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.lock().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inbox() -> Inbox {
        Inbox::new(8, 8, vec!["woman".into()])
    }

    #[test]
    fn fifo_with_consecutive_orders() {
        let ib = inbox();
        let a = ib
            .enqueue(ParticipantInput::Utterance {
                speaker: "visitor".into(),
                text: "one".into(),
                target: None,
            })
            .unwrap();
        let b = ib
            .enqueue(ParticipantInput::Utterance {
                speaker: "visitor".into(),
                text: "two".into(),
                target: Some("woman".into()),
            })
            .unwrap();
        assert_eq!((a, b), (1, 2));
        let drained = ib.drain();
        assert_eq!(drained.iter().map(|q| q.order).collect::<Vec<_>>(), vec![1, 2]);
        assert!(ib.drain().is_empty());
    }

    #[test]
    fn rejects_malformed_inputs() {
        let ib = inbox();
        let edit = |x, w, d| ParticipantInput::TerrainEdit {
            region: CellRegion::new(x, 0, w, 1),
            delta: d,
        };
        assert!(matches!(ib.enqueue(edit(7, 2, 0.1)), Err(InputError::RegionOutOfBounds(_))));
        assert!(matches!(ib.enqueue(edit(0, 0, 0.1)), Err(InputError::RegionOutOfBounds(_))));
        assert!(matches!(ib.enqueue(edit(0, 1, f64::NAN)), Err(InputError::BadDelta(_))));
        assert!(matches!(ib.enqueue(edit(0, 1, 1.5)), Err(InputError::BadDelta(_))));
        let empty = ParticipantInput::Utterance {
            speaker: "v".into(),
            text: "  ".into(),
            target: None,
        };
        assert_eq!(ib.enqueue(empty), Err(InputError::EmptyText));
        let ghost = ParticipantInput::Utterance {
            speaker: "v".into(),
            text: "hi".into(),
            target: Some("ghost".into()),
        };
        assert!(matches!(ib.enqueue(ghost), Err(InputError::UnknownTarget(_))));
        assert!(matches!(
            ib.enqueue(ParticipantInput::Shadow { cells: vec![(8, 0)] }),
            Err(InputError::CellOutOfBounds(8, 0))
        ));
        assert!(ib.is_empty());
    }

    #[test]
    fn deltas_are_quantized() {
        let ib = inbox();
        ib.enqueue(ParticipantInput::TerrainEdit {
            region: CellRegion::cell(1, 1),
            delta: 0.123_456_789,
        })
        .unwrap();
        match &ib.drain()[0].input {
            ParticipantInput::TerrainEdit { delta, .. } => assert_eq!(*delta, 0.123457),
            other => panic!("unexpected {other:?}"),
        }
    }
}
