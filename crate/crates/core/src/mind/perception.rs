use super::AgentState;
use crate::memory::{HashEmbedder, MemoryError, MemoryKind, MemoryRecord};
use crate::world::{nearby_entities, EventKind, WorldEvent, WorldSnapshot};

fn describe_event(agent: &AgentState, event: &WorldEvent, radius: f64, grid_cell: (usize, usize)) -> Option<String> {
    let me = agent.id();
    if event.source.as_deref() == Some(me.as_str()) {
        return None;
    }
    let pos = agent.pose.position;
    let near = |r: f64| event.region.distance_to(pos) <= r;
    let under_me = event.region.contains_cell(grid_cell.0, grid_cell.1);
    match event.kind {
        EventKind::Tremor if under_me => Some(format!(
            "The ground trembled beneath me (strength {:.2}).",
            event.magnitude
        )),
        EventKind::Tremor if near(radius) => Some(format!(
            "I felt the ground tremble nearby (strength {:.2}).",
            event.magnitude
        )),
        EventKind::Shadow if under_me => Some("A great shadow passed over me.".to_owned()),
        EventKind::Shadow if near(radius) => Some("A shadow fell over the sand nearby.".to_owned()),
        EventKind::Utterance => {
            let speaker = event.source.as_deref().unwrap_or("someone");
            let text = event.payload.as_deref()?;
            match &event.target {
                Some(t) if t == me => Some(format!("{speaker} said to me: \"{text}\"")),
                Some(_) => None,
                None if near(radius) => Some(format!("I heard {speaker} say: \"{text}\"")),
                None => None,
            }
        }
        EventKind::Ambient if near(event.magnitude) => {
            event.payload.as_deref().map(|p| format!("I heard {p}."))
        }
        _ => None,
    }
}

/// Turns what the agent can sense this tick into observation memories.
///
/// Covers phase changes, entities coming into or leaving range and events
/// within range. The first call only records a baseline for phase and
/// neighbours. `rate` scores the importance of each observation.
pub fn perceive(
    agent: &mut AgentState,
    snapshot: &WorldSnapshot,
    events: &[WorldEvent],
    radius: f64,
    embedder: &HashEmbedder,
    rate: &mut dyn FnMut(&str, MemoryKind) -> u8,
) -> Result<Vec<MemoryRecord>, MemoryError> {
    let now = snapshot.clock.tick();
    let mut texts = Vec::new();

    let phase = snapshot.clock.phase();
    if let Some(seen) = agent.perceived_phase {
        if seen != phase {
            texts.push(format!("It is {} now.", phase.as_str()));
        }
    }
    agent.perceived_phase = Some(phase);

    let nearby = nearby_entities(&snapshot.poses, agent.id(), radius).unwrap_or_default();
    if let Some(before) = &agent.perceived_nearby {
        for id in nearby.iter().filter(|id| !before.contains(id)) {
            texts.push(format!("{id} is near me."));
        }
        for id in before.iter().filter(|id| !nearby.contains(id)) {
            texts.push(format!("{id} is no longer near me."));
        }
    }
    agent.perceived_nearby = Some(nearby);

    let cell = snapshot.grid.cell_of(agent.pose.position);
    texts.extend(events.iter().filter_map(|e| describe_event(agent, e, radius, cell)));

    let mut out = Vec::with_capacity(texts.len());
    for text in texts {
        let importance = rate(&text, MemoryKind::Observation);
        let embedding = embedder.embed(&text);
        out.push(agent.memory.record(now, MemoryKind::Observation, text, importance, embedding)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::heuristic_importance;
    use crate::mind::Persona;
    use crate::world::{CellRegion, EntityId, EntityPose, Point, TerrainGrid, WorldClock};

    fn agent(name: &str, x: f64, y: f64) -> AgentState {
        AgentState::new(
            Persona {
                name: name.into(),
                disposition: "calm".into(),
                speech_style: "plain".into(),
            },
            Point::new(x, y),
            16,
        )
        .unwrap()
    }

    fn snapshot(tick: u64, poses: Vec<EntityPose>) -> WorldSnapshot {
        WorldSnapshot {
            clock: WorldClock::new(tick, 400).unwrap(),
            grid: TerrainGrid::filled(32, 32, 0.2).unwrap(),
            poses,
        }
    }

    fn run(a: &mut AgentState, s: &WorldSnapshot, ev: &[WorldEvent]) -> Vec<String> {
        perceive(a, s, ev, 10.0, &HashEmbedder::new(16), &mut heuristic_importance)
            .unwrap()
            .into_iter()
            .map(|r| r.text)
            .collect()
    }

    #[test]
    fn quiet_tick_yields_nothing_after_baseline() {
        let mut a = agent("woman", 5.0, 5.0);
        let other = EntityPose::new("boy", Point::new(7.0, 5.0));
        let s = snapshot(1, vec![a.pose.clone(), other.clone()]);
        assert!(run(&mut a, &s, &[]).is_empty());
        let s = snapshot(2, vec![a.pose.clone(), other]);
        assert!(run(&mut a, &s, &[]).is_empty());
        assert!(a.memory.is_empty());
    }

    #[test]
    fn churn_phase_and_events_are_observed() {
        let mut a = agent("woman", 5.0, 5.0);
        let s = snapshot(99, vec![a.pose.clone()]);
        run(&mut a, &s, &[]);
        let s = snapshot(100, vec![a.pose.clone(), EntityPose::new("boy", Point::new(6.0, 5.0))]);
        let tremor = crate::world::detect_tremor(2.0, 0.5, CellRegion::new(4, 4, 3, 3), 100).unwrap();
        let far = crate::world::detect_tremor(2.0, 0.5, CellRegion::new(30, 30, 1, 1), 100).unwrap();
        let to_boy = WorldEvent::utterance("visitor", "hello", Some(EntityId::new("boy")), CellRegion::cell(5, 5), 100).unwrap();
        let to_me = WorldEvent::utterance("visitor", "hi woman", Some(EntityId::new("woman")), CellRegion::cell(30, 30), 100).unwrap();
        let got = run(&mut a, &s, &[tremor, far, to_boy, to_me]);
        assert_eq!(
            got,
            vec![
                "It is day now.".to_owned(),
                "boy is near me.".to_owned(),
                "The ground trembled beneath me (strength 2.00).".to_owned(),
                "visitor said to me: \"hi woman\"".to_owned(),
            ]
        );
    }

    #[test]
    fn own_whistle_is_not_heard_but_others_are() {
        let mut a = agent("woman", 5.0, 5.0);
        let s = snapshot(3, vec![a.pose.clone()]);
        run(&mut a, &s, &[]);
        let mine = WorldEvent::ambient("woman", "woman whistling", 20.0, CellRegion::cell(5, 5), 3);
        let theirs = WorldEvent::ambient("boy", "boy whistling", 20.0, CellRegion::cell(20, 5), 3);
        let too_far = WorldEvent::ambient("flamingo", "flamingo whistling", 5.0, CellRegion::cell(25, 25), 3);
        assert_eq!(run(&mut a, &s, &[mine, theirs, too_far]), vec!["I heard boy whistling.".to_owned()]);
    }
}
