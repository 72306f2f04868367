use llmscape_core::replay::{replay_scripted, Divergence};
use llmscape_core::scenario::Scenario;
use llmscape_core::session_log::{summarize, Category, LogEntry, MemorySink};
use llmscape_core::sim::{ParticipantInput, Simulation};
use llmscape_core::snapshot::StateSnapshot;
use llmscape_core::world::{CellRegion, Posture};
use serde_json::Value;

const LONE: &str = r#"
name = "lone"

[world]
width = 8
height = 8
tremor_threshold = 0.5

[world.terrain]
base = 0.2

[memory]
reflection_threshold = 1000

[[agents]]
name = "woman"
disposition = "She is patient."
speech_style = "few words"
position = [0.5, 0.5]

[[schedule]]
tick = 5
kind = "terrain_edit"
region = { x = 0, y = 0, width = 8, height = 8 }
delta = 0.5
"#;

const LONE_SCRIPT: &str = r#"
{"agent": "woman", "step": 1, "reply": {"text": "goal: rest a while\nstep: sit_down | sit\nstep: rest | rest"}}
{"agent": "woman", "step": 2, "reply": {"tool_calls": [{"name": "sit_down"}]}}
{"agent": "woman", "step": 3, "reply": {"tool_calls": [{"name": "rest"}]}}
{"agent": "woman", "step": 4, "reply": {"tool_calls": [{"name": "stand_up"}]}}
{"agent": "woman", "step": 5, "reply": {"tool_calls": [{"name": "go_to", "arguments": {"target": [3.5, 0.5]}}]}}
"#;

fn run(scenario: &Scenario, seed: u64, ticks: u64) -> (Vec<String>, String, Simulation) {
    let mut sim = Simulation::scripted(scenario, seed).unwrap();
    let sink = MemorySink::default();
    sim.add_log_sink(sink.clone());
    let digest = sim.run(ticks).unwrap();
    (sink.lines(), digest, sim)
}

fn entries(lines: &[String]) -> Vec<LogEntry> {
    lines.iter().map(|l| LogEntry::parse_line(l).unwrap()).collect()
}

fn lone() -> Scenario {
    let mut s = Scenario::parse(LONE).unwrap();
    s.embedded_script = Some(LONE_SCRIPT);
    s
}

#[test]
fn twenty_ticks_follow_the_hand_derived_schedule() {
    let (lines, _, sim) = run(&lone(), 7, 20);
    let log = entries(&lines);
    let actions: Vec<(u64, String)> = log
        .iter()
        .filter(|e| e.category == Category::Action)
        .map(|e| (e.tick, e.payload["action"].as_str().unwrap().to_owned()))
        .collect();
    // sit_down 1 tick, rest 10, stand_up 1, go_to 3 cells at speed 1, then
    // the exhausted script waits one tick at a time.
    let expected: Vec<(u64, &str)> = vec![
        (1, "sit_down"),
        (2, "rest"),
        (12, "stand_up"),
        (13, "go_to"),
        (16, "wait"),
        (17, "wait"),
        (18, "wait"),
        (19, "wait"),
        (20, "wait"),
    ];
    assert_eq!(
        actions,
        expected.iter().map(|(t, a)| (*t, a.to_string())).collect::<Vec<_>>()
    );

    let plans: Vec<&LogEntry> = log.iter().filter(|e| e.category == Category::Planning).collect();
    assert_eq!(plans.len(), 1);
    assert_eq!(plans[0].tick, 1);
    assert_eq!(plans[0].payload["goal"], "rest a while");

    // 64 cells raised by 0.5 each.
    let tremors: Vec<&LogEntry> = log
        .iter()
        .filter(|e| e.payload.get("kind").and_then(Value::as_str) == Some("tremor"))
        .collect();
    assert_eq!(tremors.len(), 1);
    assert_eq!(tremors[0].tick, 5);
    assert!((tremors[0].payload["magnitude"].as_f64().unwrap() - 32.0).abs() < 1e-9);

    let a = &sim.agents()[0];
    assert_eq!(a.pose.posture, Posture::Standing);
    assert!((a.pose.position.x - 3.5).abs() < 1e-12 && (a.pose.position.y - 0.5).abs() < 1e-12);
    // 0.2 - 0.005 - 10*0.01 + 0.002 + 3*0.01 - 5*0.002
    assert!((a.somatic.tiredness() - 0.117).abs() < 1e-9, "{}", a.somatic.tiredness());
    assert!((sim.grid().get(0, 0).unwrap() - 0.7).abs() < 1e-12);
}

#[test]
fn seeded_runs_are_byte_identical() {
    let sc = Scenario::builtin_default();
    let (a, da, _) = run(&sc, 42, 200);
    let (b, db, _) = run(&sc, 42, 200);
    assert_eq!(a, b);
    assert_eq!(da, db);
    let (c, dc, _) = run(&sc, 43, 200);
    assert_ne!(da, dc, "seed should reach the wander targets");
    assert_ne!(a, c);
}

#[test]
fn log_is_gap_free_and_schema_clean() {
    let sc = Scenario::builtin_default();
    let (lines, _, sim) = run(&sc, 42, 300);
    let log = entries(&lines);
    for (i, e) in log.iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1);
        if i > 0 {
            assert!(e.tick >= log[i - 1].tick);
        }
        assert_ne!(e.payload.get("code").and_then(Value::as_str), Some("schema_violation"));
    }
    let actions = log.iter().filter(|e| e.category == Category::Action).count() as u64;
    assert_eq!(actions, sim.actions_executed());
}

#[test]
fn replay_matches_with_participant_inputs() {
    let sc = Scenario::builtin_default();
    let mut sim = Simulation::scripted(&sc, 42).unwrap();
    let sink = MemorySink::default();
    sim.add_log_sink(sink.clone());
    let inbox = sim.inbox();
    for t in 1..=150u64 {
        if t % 17 == 0 {
            inbox
                .enqueue(ParticipantInput::TerrainEdit {
                    region: CellRegion::new((t % 50) as usize, 30, 4, 4),
                    delta: -0.123_456_789,
                })
                .unwrap();
        }
        if t % 23 == 0 {
            inbox
                .enqueue(ParticipantInput::Utterance {
                    speaker: "visitor".into(),
                    text: format!("hello at {t}"),
                    target: Some("boy".into()),
                })
                .unwrap();
        }
        if t == 40 {
            inbox
                .enqueue(ParticipantInput::Shadow {
                    cells: vec![(34, 31), (30, 30)],
                })
                .unwrap();
        }
        sim.tick().unwrap();
    }
    let (digest, _) = sim.finish().unwrap();
    let text = sink.lines().join("\n");
    assert!(text.contains("\"origin\":\"participant\""));

    let report = replay_scripted(&text, &sc).unwrap();
    assert_eq!(report.divergence, None);
    assert_eq!(report.replayed_digest, digest);
    assert!(report.is_faithful());

    // A tampered line is found by sequence number.
    let mut lines = sink.lines();
    let idx = lines.iter().position(|l| l.contains("\"category\":\"action\"")).unwrap();
    lines[idx] = lines[idx].replacen("\"duration\":", "\"duration\":9", 1);
    let report = replay_scripted(&lines.join("\n"), &sc).unwrap();
    let Some(Divergence { seq, .. }) = report.divergence else {
        panic!("tampering went unnoticed");
    };
    assert_eq!(seq, idx as u64 + 1);
}

#[test]
fn conversations_alternate_and_release_both_agents() {
    let sc = Scenario::builtin_default();
    let (lines, _, sim) = run(&sc, 42, 500);
    let log = entries(&lines);
    assert!(sim.closed_conversations().len() >= 3);
    for c in sim.closed_conversations() {
        assert!(!c.is_open());
        for w in c.turns().windows(2) {
            assert_ne!(w[0].speaker, w[1].speaker);
        }
        assert!(c.turns().len() <= c.max_turns());
        let closed_at = log
            .iter()
            .find(|e| {
                e.payload.get("kind").and_then(Value::as_str) == Some("conversation_closed")
                    && e.payload["conversation"].as_u64() == Some(c.id.0)
            })
            .expect("closure is logged")
            .tick;
        // Neither agent speaks in this conversation again, and both act later.
        for who in c.participants() {
            if sim.agents().iter().any(|a| a.id() == who) && closed_at + 2 < 500 {
                assert!(log.iter().any(|e| e.tick > closed_at && e.actor == who.as_str()
                    && e.category == Category::Action));
            }
        }
    }
    for a in sim.agents() {
        if a.conversation.is_none() {
            assert!(sim.open_conversations().all(|c| !c.participants().contains(a.id())));
        }
    }
}

#[test]
fn summary_matches_a_line_count() {
    let sc = Scenario::builtin_default();
    let (lines, _, _) = run(&sc, 42, 120);
    let text = lines.join("\n");
    let summary = summarize(text.as_bytes()).unwrap();
    assert_eq!(summary.entries, lines.len() as u64);
    for cat in Category::ALL {
        let needle = format!("\"category\":\"{}\"", cat.as_str());
        let n = lines.iter().filter(|l| l.contains(&needle)).count() as u64;
        assert_eq!(summary.categories[cat.as_str()], n, "{cat}");
    }
}

#[test]
fn snapshot_hides_memories() {
    let sc = Scenario::builtin_default();
    let (_, _, sim) = run(&sc, 42, 30);
    let snap = StateSnapshot::capture(&sim, 4);
    assert_eq!(snap.tick, 30);
    assert_eq!(snap.agents.len(), 3);
    assert_eq!((snap.terrain.width, snap.terrain.height), (16, 16));
    let json = serde_json::to_string(&snap).unwrap();
    assert!(!json.contains("memory") && !json.contains("embedding"));
}
