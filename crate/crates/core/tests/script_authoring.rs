//! Regenerates the built-in scenario's reply script from a fixed authoring
//! policy. Run with `cargo test -p llmscape-core --test script_authoring -- --ignored`
//! after changing anything that shifts the order of backend calls.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use llmscape_core::gateway::{Backend, BackendError, CompletionRequest, ModelReply, Purpose, RawToolCall};
use llmscape_core::scenario::Scenario;
use llmscape_core::sim::Simulation;
use serde_json::{json, Value};

struct Persona {
    home: (f64, f64),
    plan: &'static str,
    adapt: &'static str,
    actions: Vec<Value>,
    lines: &'static [&'static str],
    insights: &'static [&'static str],
}

fn call(name: &str) -> Value {
    json!({"name": name})
}

fn call_at(name: &str, x: f64, y: f64) -> Value {
    json!({"name": name, "arguments": {"target": {"x": x, "y": y}}})
}

fn call_to(name: &str, who: &str) -> Value {
    json!({"name": name, "arguments": {"target": who}})
}

fn personas() -> BTreeMap<&'static str, Persona> {
    let mut m = BTreeMap::new();
    m.insert(
        "woman",
        Persona {
            home: (30.5, 30.5),
            plan: "goal: Keep the little mound by the water in good shape\n\
                   step: pile_up_sand 31 30 | heap sand on the mound\n\
                   step: rest | rest beside the mound\n\
                   step: talk_to boy | ask the boy what he has seen",
            adapt: "step: go_to 26 27 | look at the old dune\nstep: pile_up_sand | mend whatever shifted",
            actions: vec![
                call_at("pile_up_sand", 31.0, 30.0),
                call("rest"),
                call_to("talk_to", "boy"),
                call("sit_down"),
                call("whistle"),
                call("stand_up"),
                call_at("go_to", 26.5, 27.5),
                call("pile_up_sand"),
                call("adapt_your_plan"),
                call("take_nap"),
                call("stand_up"),
                call("self_reflect"),
                call_at("go_to", 31.5, 30.5),
                call("wander"),
                call_to("talk_to", "flamingo"),
                call("dance"),
            ],
            lines: &[
                "Did you feel the ground move?",
                "It moves when the shadow comes.",
                "Stay close to the mound.",
                "We will watch it together.",
                "Good. Rest now.",
            ],
            insights: &[
                "[6] The ground shifts after the great shadow passes.",
                "[4] The mound needs tending every day.\n[5] The boy notices things before I do.",
                "[5] Someone beyond the sand is watching us.",
            ],
        },
    );
    m.insert(
        "boy",
        Persona {
            home: (33.5, 31.5),
            plan: "goal: Find out where the shaking comes from\n\
                   step: wander | look around the island\n\
                   step: talk_to flamingo | ask the flamingo about it\n\
                   step: dance | dance to stay warm",
            adapt: "goal: Follow the trembling to its source\nstep: go_to 30 30 | search near the woman\nstep: whistle | call out",
            actions: vec![
                call("wander"),
                call_to("talk_to", "flamingo"),
                call("dance"),
                call("stand_up"),
                call_at("go_to", 29.5, 30.5),
                call_at("pile_up_sand", 29.0, 29.0),
                call("sit_down"),
                call("whistle"),
                call("stand_up"),
                json!({"name": "fly"}),
                call("wander"),
                call_to("talk_to", "woman"),
                call("take_nap"),
                call("stand_up"),
                call("adapt_your_plan"),
                call("rest"),
            ],
            lines: &[
                "Why does the sand shake?",
                "Is it a giant under the island?",
                "Can you hear the whistling too?",
                "What happens at night?",
                "Will it come back tomorrow?",
                "Okay, bye!",
            ],
            insights: &[
                "[7] Something big lives above the sky.",
                "[4] The flamingo knows more than it says.",
                "[6] The shaking and the shadow are the same thing.",
            ],
        },
    );
    m.insert(
        "flamingo",
        Persona {
            home: (37.5, 28.5),
            plan: "goal: Be admired by everyone on the island\n\
                   step: dance | dance where all can see\n\
                   step: whistle | call for an audience\n\
                   step: talk_to woman | tell the woman about the dance",
            adapt: "step: dance | dance again, grander\nstep: talk_to boy | accept the boy's praise",
            actions: vec![
                call("dance"),
                call("whistle"),
                call_at("go_to", 36.5, 28.5),
                call_to("talk_to", "woman"),
                call("sit_down"),
                call("take_nap"),
                call("stand_up"),
                call("dance"),
                call("formulate_goals"),
                json!({"name": "fly", "arguments": {"target": "sky"}}),
                call("wander"),
                call("rest"),
                call_to("talk_to", "boy"),
                call("dance"),
            ],
            lines: &[
                "Darling, the island trembles at my feet.",
                "I dance because the sand adores me.",
                "Have you ever seen such grace?",
                "The shadow is only my audience leaning in.",
                "Enough. I must rehearse.",
            ],
            insights: &[
                "[6] The voices from nowhere admire my dancing.",
                "[3] Naps improve my plumage.",
                "[5] When I dance, the others gather.",
            ],
        },
    );
    m
}

fn near(world: &str, who: &str) -> bool {
    world
        .lines()
        .find(|l| l.starts_with("Near you:"))
        .is_some_and(|l| l.contains(&format!("{who} at")))
}

#[derive(Default)]
struct Counters {
    step: u64,
    action: usize,
    line: usize,
    insight: usize,
}

struct Author {
    personas: BTreeMap<&'static str, Persona>,
    counters: BTreeMap<String, Counters>,
    out: String,
}

impl Backend for Author {
    fn complete(&mut self, req: CompletionRequest<'_>) -> Result<ModelReply, BackendError> {
        let name = req.agent.as_str();
        let p = &self.personas[name];
        let c = self.counters.entry(name.to_owned()).or_default();
        c.step += 1;
        let reply = match req.purpose {
            Purpose::FormulateGoals => ModelReply::text(p.plan),
            Purpose::AdaptPlan => ModelReply::text(p.adapt),
            Purpose::Reflect => {
                let t = p.insights[c.insight % p.insights.len()];
                c.insight += 1;
                ModelReply::text(t)
            }
            Purpose::Speak => {
                let mut t = p.lines[c.line % p.lines.len()].to_owned();
                c.line += 1;
                if req.context.conversation_history.len() >= 4 {
                    t.push_str(" [END]");
                }
                ModelReply::text(t)
            }
            Purpose::RateImportance => ModelReply::text("4"),
            Purpose::ChooseAction => {
                let world = &req.context.world_context;
                let next = &p.actions[c.action % p.actions.len()];
                let name = next["name"].as_str().unwrap_or_default();
                let needs_standing = matches!(name, "sit_down" | "dance" | "wander" | "go_to");
                let v = if needs_standing && !world.contains("), standing.") {
                    call("stand_up")
                } else if name == "talk_to" && !near(world, next["arguments"]["target"].as_str().unwrap_or_default()) {
                    c.action += 1;
                    call_at("go_to", p.home.0, p.home.1)
                } else {
                    c.action += 1;
                    next.clone()
                };
                let raw: RawToolCall = serde_json::from_value(v).unwrap();
                ModelReply::ToolCalls(vec![raw])
            }
        };
        let line = json!({"agent": name, "step": c.step, "reply": reply});
        writeln!(self.out, "{line}").unwrap();
        Ok(reply)
    }
}

#[test]
#[ignore]
fn regenerate_default_script() {
    let mut sc = Scenario::builtin_default();
    sc.embedded_script = None;
    let author = Author {
        personas: personas(),
        counters: BTreeMap::new(),
        out: String::from("# scripted replies, keyed by agent and per-agent call number\n"),
    };
    let shared = std::sync::Arc::new(std::sync::Mutex::new(author));
    struct Handle(std::sync::Arc<std::sync::Mutex<Author>>);
    impl Backend for Handle {
        fn complete(&mut self, req: CompletionRequest<'_>) -> Result<ModelReply, BackendError> {
            self.0.lock().unwrap().complete(req)
        }
    }
    let mut sim = Simulation::new(&sc, sc.seed, Box::new(Handle(shared.clone()))).unwrap();
    let authored = sim.run(500).unwrap();
    let text = shared.lock().unwrap().out.clone();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/default.script.jsonl");
    std::fs::write(path, &text).unwrap();

    sc.embedded_script = Some(Box::leak(text.into_boxed_str()));
    let replayed = Simulation::scripted(&sc, sc.seed).unwrap().run(500).unwrap();
    assert_eq!(authored, replayed, "script does not reproduce the authored run");
}
