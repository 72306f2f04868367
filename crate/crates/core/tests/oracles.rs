use llmscape_core::action::{
    execute_action, validate_action, ActionKind, ActionRequest, ExecutionContext, ValidationContext,
};
use llmscape_core::gateway::{
    action_catalogue, assemble_prompt, estimate_tokens, parse_tool_calls, PromptSpec, ScriptedBackend, ModelReply,
};
use llmscape_core::memory::{
    recency_score, synthesize_reflection, HashEmbedder, MemoryKind, MemoryRecord, MemoryStore, ReflectionSettings,
    RetrievalWeights, ScoredMemory, Scoring,
};
use llmscape_core::mind::{request_from_call, update_somatic, AgentState, Persona, SomaticState};
use llmscape_core::world::{
    detect_tremor, CellRegion, EntityId, Point, Posture, TerrainGrid, WorldClock, WorldSnapshot,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn brute_score(r: &MemoryRecord, q: &[f64], now: u64, w: [f64; 3], half_life: f64) -> f64 {
    let recency = 0.5f64.powf(now.saturating_sub(r.last_access) as f64 / half_life);
    let importance = f64::from(r.importance) / 10.0;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (a, b) in r.embedding.iter().zip(q) {
        dot += a * b;
        na += a * a;
        nb += b * b;
    }
    let relevance = if na == 0.0 || nb == 0.0 {
        0.5
    } else {
        ((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0) + 1.0) / 2.0
    };
    w[0] * recency + w[1] * importance + w[2] * relevance
}

type StoreCase = (Vec<(u64, u8, Vec<f64>)>, Vec<f64>, usize);

fn store_strategy() -> impl Strategy<Value = StoreCase> {
    let dim = 4;
    (
        prop::collection::vec((0u64..50, 1u8..=10, prop::collection::vec(-2i8..=2, dim)), 0..=64),
        prop::collection::vec(-2i8..=2, dim),
        0usize..20,
    )
        .prop_map(|(recs, q, k)| {
            let f = |v: Vec<i8>| v.into_iter().map(f64::from).collect::<Vec<_>>();
            (recs.into_iter().map(|(t, i, e)| (t, i, f(e))).collect(), f(q), k)
        })
}

proptest! {
    #[test]
    fn retrieval_equals_brute_force_sort((recs, query, k) in store_strategy(), now in 50u64..200) {
        let w = [0.5, 0.3, 0.2];
        let scoring = Scoring::new(RetrievalWeights::new(w[0], w[1], w[2]).unwrap(), 40.0).unwrap();
        let mut store = MemoryStore::new(4).unwrap();
        for (tick, imp, emb) in &recs {
            store.record(*tick, MemoryKind::Observation, format!("m{tick}"), *imp, emb.clone()).unwrap();
        }
        let before: Vec<MemoryRecord> = store.records().to_vec();
        let mut expected: Vec<(f64, u64, u64)> = before
            .iter()
            .map(|r| (brute_score(r, &query, now, w, 40.0), r.tick, r.id))
            .collect();
        expected.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2)));
        let want: Vec<u64> = expected.iter().take(k).map(|e| e.2).collect();
        let got = store.retrieve_top_k(&query, k, now, &scoring).unwrap();
        prop_assert_eq!(got.iter().map(|m| m.record.id).collect::<Vec<_>>(), want.clone());
        for r in store.records() {
            let old = before.iter().find(|b| b.id == r.id).unwrap();
            let expect = if want.contains(&r.id) { now.max(old.last_access) } else { old.last_access };
            prop_assert_eq!(r.last_access, expect);
        }
    }

    #[test]
    fn tremors_are_exactly_the_threshold_filter(
        edits in prop::collection::vec((0usize..8, 0usize..8, 1usize..4, 1usize..4, -1.0f64..1.0), 1..60),
        threshold in 0.0f64..2.0,
    ) {
        let mut grid = TerrainGrid::filled(10, 10, 0.5).unwrap();
        let mut shadow = vec![0.5f64; 100];
        let mut got = Vec::new();
        let mut want = Vec::new();
        for (i, &(x, y, w, h, delta)) in edits.iter().enumerate() {
            let region = CellRegion::new(x, y, w, h);
            let total = grid.apply_edit(region, delta).unwrap();
            if let Some(t) = detect_tremor(total, threshold, region, i as u64) {
                got.push((t.tick, t.magnitude));
            }
            let mut change = 0.0;
            for yy in y..y + h {
                for xx in x..x + w {
                    let old = shadow[yy * 10 + xx];
                    let new = (old + delta).clamp(0.0, 1.0);
                    change += (new - old).abs();
                    shadow[yy * 10 + xx] = new;
                }
            }
            prop_assert!((change - total).abs() < 1e-12);
            if change > threshold {
                want.push((i as u64, change));
            }
        }
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!(g.0, w.0);
            prop_assert!((g.1 - w.1).abs() < 1e-12);
        }
    }

    #[test]
    fn tiredness_stays_in_unit_interval(
        start in -0.5f64..1.5,
        steps in prop::collection::vec((0usize..14, 0u64..100), 1..50),
    ) {
        let mut s = SomaticState::new(start);
        for (k, d) in steps {
            s = update_somatic(s, ActionKind::ALL[k], d);
            prop_assert!((0.0..=1.0).contains(&s.tiredness()));
        }
    }

    #[test]
    fn tool_call_parsing_never_escapes_the_catalogue(raw in ".{0,200}") {
        let cat = action_catalogue();
        if let Ok(calls) = parse_tool_calls(&raw, &cat) {
            for c in calls {
                prop_assert!(cat.get(&c.name).is_some());
                prop_assert!(request_from_call(&c, &EntityId::new("boy"), 0).is_ok());
            }
        }
    }

    #[test]
    fn json_shaped_tool_calls_stay_in_the_catalogue(
        name in prop_oneof![Just("talk_to".to_owned()), Just("dance".to_owned()), Just("fly".to_owned()), "[a-z_]{0,12}"],
        arg in prop_oneof![Just("\"boy\"".to_owned()), Just("[1, 2]".to_owned()), Just("{\"x\": 1}".to_owned()), Just("7".to_owned())],
    ) {
        let cat = action_catalogue();
        let raw = format!("{{\"tool_calls\": [{{\"name\": \"{name}\", \"arguments\": {{\"target\": {arg}}}}}]}}");
        match parse_tool_calls(&raw, &cat) {
            Ok(calls) => {
                for c in calls {
                    prop_assert!(cat.get(&c.name).is_some());
                }
            }
            Err(_) => prop_assert!(cat.get(&name).is_none() || name == "dance" || arg != "\"boy\""),
        }
    }

    #[test]
    fn validated_sequences_respect_posture(kinds in prop::collection::vec(0usize..14, 1..80), seed in any::<u64>()) {
        let mut agent = AgentState::new(
            Persona { name: "boy".into(), disposition: String::new(), speech_style: String::new() },
            Point::new(4.5, 4.5),
            4,
        ).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (t, k) in kinds.into_iter().enumerate() {
            let kind = ActionKind::ALL[k];
            let snapshot = WorldSnapshot {
                clock: WorldClock::new(t as u64, 100).unwrap(),
                grid: TerrainGrid::filled(10, 10, 0.2).unwrap(),
                poses: vec![agent.pose.clone()],
            };
            let req = ActionRequest::new(agent.id().clone(), kind, None, t as u64);
            let ctx = ValidationContext { snapshot: &snapshot, unavailable: &[], participants: &[], perception_radius: 5.0 };
            if validate_action(&req, &agent, &ctx).is_err() {
                continue;
            }
            let before = agent.pose.posture;
            prop_assert!(!(kind == ActionKind::StandUp && before == Posture::Standing));
            prop_assert!(!(kind == ActionKind::SitDown && before == Posture::Napping));
            let mut ectx = ExecutionContext { snapshot: &snapshot, speed: 1.0, perception_radius: 5.0, rng: &mut rng };
            let fx = execute_action(&req, &agent, &mut ectx);
            if let Some(p) = fx.posture {
                agent.pose.posture = p;
            }
            agent.somatic = fx.somatic;
        }
    }

    #[test]
    fn reflection_fires_when_the_running_sum_first_reaches_threshold(
        importances in prop::collection::vec(1u8..=10, 1..120),
        threshold in 1u32..80,
    ) {
        let embedder = HashEmbedder::new(8);
        let mut backend = ScriptedBackend::new();
        for step in 1..=200 {
            backend = backend.with_reply("woman", step, ModelReply::text("[4] The sand remembers."));
        }
        let settings = ReflectionSettings {
            threshold,
            top_k: 4,
            recent_window: 3,
            scoring: Scoring::default(),
            token_budget: 4096,
        };
        let mut store = MemoryStore::new(8).unwrap();
        let mut running = 0u32;
        for (t, imp) in importances.into_iter().enumerate() {
            store.record(t as u64, MemoryKind::Observation, format!("event {t}"), imp, embedder.embed("event")).unwrap();
            running += u32::from(imp);
            let fired = synthesize_reflection(&mut store, &mut backend, &EntityId::new("woman"), "", t as u64, &settings, &embedder).is_ok();
            prop_assert_eq!(fired, running >= threshold);
            if fired {
                running = 0;
                prop_assert_eq!(store.importance_accumulator(), 0);
            } else {
                prop_assert_eq!(store.importance_accumulator(), running);
            }
        }
    }

    #[test]
    fn prompts_fit_the_budget_with_a_prefix_of_memories(
        texts in prop::collection::vec("[a-z ]{1,80}", 0..30),
        budget in 0usize..400,
    ) {
        let memories: Vec<ScoredMemory> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| ScoredMemory {
                record: MemoryRecord {
                    id: i as u64 + 1,
                    tick: i as u64,
                    kind: MemoryKind::Observation,
                    text: t.clone(),
                    importance: 3,
                    embedding: vec![0.0],
                    last_access: i as u64,
                },
                score: ((i * 7919) % 13) as f64 / 13.0,
            })
            .collect();
        let spec = PromptSpec {
            system_text: "You are the woman.".into(),
            world_context: "It is dawn.".into(),
            instruction: "Act.".into(),
            memories: &memories,
            history: &[],
            tools: &[],
            budget,
        };
        let fixed = estimate_tokens("You are the woman.") + estimate_tokens("It is dawn.") + estimate_tokens("Act.");
        match assemble_prompt(spec) {
            Err(_) => prop_assert!(fixed > budget),
            Ok(ctx) => {
                prop_assert!(ctx.estimated_tokens() <= budget);
                let mut ranked: Vec<&ScoredMemory> = memories.iter().collect();
                ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(b.record.tick.cmp(&a.record.tick)).then(b.record.id.cmp(&a.record.id)));
                let m = ctx.retrieved_memories.len();
                let ids: Vec<u64> = ctx.retrieved_memories.iter().map(|p| p.id).collect();
                let prefix: Vec<u64> = ranked.iter().take(m).map(|s| s.record.id).collect();
                prop_assert_eq!(ids, prefix);
                if let Some(next) = ranked.get(m) {
                    let line = format!("- (tick {}) {}", next.record.tick, next.record.text);
                    prop_assert!(ctx.estimated_tokens() + estimate_tokens(&line) > budget);
                }
            }
        }
    }
}

#[test]
fn recency_halves_at_the_half_life_and_decreases() {
    for half_life in [1.0, 7.0, 100.0, 333.0] {
        let rec = |last_access| MemoryRecord {
            id: 1,
            tick: 0,
            kind: MemoryKind::Observation,
            text: "x".into(),
            importance: 1,
            embedding: vec![1.0],
            last_access,
        };
        let now = 10_000;
        let at = recency_score(&rec(now - half_life as u64), now, half_life);
        assert!((at - 0.5).abs() < 1e-9);
        let mut prev = f64::INFINITY;
        for age in 0..=(10.0 * half_life) as u64 {
            let r = recency_score(&rec(now - age), now, half_life);
            assert!(r < prev, "not decreasing at age {age}");
            prev = r;
        }
    }
}

#[test]
fn thirty_ticks_of_napping_from_half_reaches_zero() {
    let s = update_somatic(SomaticState::new(0.5), ActionKind::TakeNap, 30);
    assert_eq!(s.tiredness(), 0.0);
    let mut step = SomaticState::new(0.5);
    for _ in 0..30 {
        step = update_somatic(step, ActionKind::TakeNap, 1);
    }
    assert!(step.tiredness().abs() < 1e-12);
}

#[test]
fn oracle_scores_a_hand_example() {
    let r = MemoryRecord {
        id: 1,
        tick: 0,
        kind: MemoryKind::Observation,
        text: "x".into(),
        importance: 5,
        embedding: vec![1.0, 0.0],
        last_access: 0,
    };
    let s = brute_score(&r, &[1.0, 0.0], 100, [1.0 / 3.0; 3], 100.0);
    assert!((s - (0.5 + 0.5 + 1.0) / 3.0).abs() < 1e-12);
}
