use std::time::Duration;

use futures_util::StreamExt;
use llmscape::{launch, RunOptions, SessionHandle};
use llmscape_core::scenario::Scenario;
use llmscape_core::session_log::LogEntry;
use llmscape_core::sim::Simulation;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

async fn serve(session: SessionHandle) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = llmscape::api::router(session);
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("127.0.0.1:{}", addr.port())
}

fn start(ticks: Option<u64>, interval_ms: u64) -> (SessionHandle, std::thread::JoinHandle<Result<String, llmscape_core::sim::SimError>>) {
    let sc = Scenario::builtin_default();
    let sim = Simulation::scripted(&sc, 42).unwrap();
    launch(
        sim,
        RunOptions {
            ticks,
            tick_interval: Duration::from_millis(interval_ms),
            snapshot_factor: 1,
        },
    )
}

async fn wait_for_tick(session: &SessionHandle, tick: u64) {
    for _ in 0..500 {
        if session.status().tick >= tick {
            return;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("session never reached tick {tick}");
}

async fn read_lines(url: &str, until_seq: u64) -> Vec<LogEntry> {
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let mut out = Vec::new();
    while let Some(msg) = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap() {
        if let Message::Text(t) = msg.unwrap() {
            let e = LogEntry::parse_line(&t).unwrap();
            let seq = e.seq;
            out.push(e);
            if seq >= until_seq {
                break;
            }
        }
    }
    out
}

#[tokio::test]
async fn fresh_session_reports_tick_zero_and_hides_memories() {
    let (session, thread) = start(Some(0), 0);
    thread.join().unwrap().unwrap();
    let base = serve(session).await;
    let state: Value = reqwest::get(format!("http://{base}/state")).await.unwrap().json().await.unwrap();
    assert_eq!(state["tick"], 0);
    assert_eq!(state["agents"].as_array().unwrap().len(), 3);
    let raw = state.to_string();
    for private in ["memory", "embedding", "prompt", "importance"] {
        assert!(!raw.contains(private), "{private} leaked");
    }
}

#[tokio::test]
async fn state_follows_headless_ticks_and_reads_do_not_mutate() {
    let (session, thread) = start(Some(10), 0);
    let digest = thread.join().unwrap().unwrap();
    let base = serve(session.clone()).await;
    let client = reqwest::Client::new();
    let first: Value = client.get(format!("http://{base}/state")).send().await.unwrap().json().await.unwrap();
    assert_eq!(first["tick"], 10);
    for path in ["state", "session", "log/summary"] {
        client.get(format!("http://{base}/{path}")).send().await.unwrap();
    }
    let again: Value = client.get(format!("http://{base}/state")).send().await.unwrap().json().await.unwrap();
    assert_eq!(first, again);
    let status: Value = client.get(format!("http://{base}/session")).send().await.unwrap().json().await.unwrap();
    assert_eq!(status["digest"], digest);
    assert_eq!(status["running"], false);
    assert!(session.inbox().is_empty());

    // Inputs after the end are refused.
    let r = client
        .post(format!("http://{base}/utterance"))
        .json(&json!({"text": "anyone?"}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 409);
}

#[tokio::test]
async fn inputs_are_accepted_or_rejected() {
    let (session, thread) = start(None, 20);
    let base = serve(session.clone()).await;
    let client = reqwest::Client::new();

    let ok = client
        .post(format!("http://{base}/terrain"))
        .json(&json!({"region": {"x": 1, "y": 1, "width": 2, "height": 2}, "delta": 0.2}))
        .send()
        .await
        .unwrap();
    assert_eq!(ok.status(), 202);
    let body: Value = ok.json().await.unwrap();
    assert_eq!(body["accepted"], true);
    assert!(body["order"].as_u64().unwrap() >= 1);

    let off = client
        .post(format!("http://{base}/terrain"))
        .json(&json!({"region": {"x": 63, "y": 0, "width": 2, "height": 1}, "delta": 0.2}))
        .send()
        .await
        .unwrap();
    assert_eq!(off.status(), 400);
    assert_eq!(off.json::<Value>().await.unwrap()["accepted"], false);

    let empty = client
        .post(format!("http://{base}/utterance"))
        .json(&json!({"text": "   ", "target": "woman"}))
        .send()
        .await
        .unwrap();
    assert_eq!(empty.status(), 400);

    let shadow = client
        .post(format!("http://{base}/shadow"))
        .json(&json!({"cells": [[30, 30], [31, 30]]}))
        .send()
        .await
        .unwrap();
    assert_eq!(shadow.status(), 202);

    // Concurrent posts get distinct, consecutive orders.
    let post = |i: usize| {
        let client = client.clone();
        let url = format!("http://{base}/terrain");
        async move {
            let r: Value = client
                .post(url)
                .json(&json!({"region": {"x": i % 60, "y": 5, "width": 1, "height": 1}, "delta": 0.01}))
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap();
            r["order"].as_u64().unwrap()
        }
    };
    let mut orders = futures_util::future::join_all((0..16).map(post)).await;
    orders.sort_unstable();
    for w in orders.windows(2) {
        assert_eq!(w[1], w[0] + 1);
    }

    session.stop();
    thread.join().unwrap().unwrap();
}

#[tokio::test]
async fn utterance_becomes_a_speech_entry_on_the_stream() {
    let (session, thread) = start(None, 10);
    let base = serve(session.clone()).await;
    wait_for_tick(&session, 3).await;
    let r: Value = reqwest::Client::new()
        .post(format!("http://{base}/utterance"))
        .json(&json!({"speaker": "visitor", "text": "hello", "target": "woman"}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(r["accepted"], true);
    let posted_at = session.status().tick;

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{base}/events?since=0")).await.unwrap();
    let found = loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap().unwrap().unwrap();
        if let Message::Text(t) = msg {
            let e = LogEntry::parse_line(&t).unwrap();
            if e.actor == "participant" && e.payload.get("text") == Some(&json!("hello")) {
                break e;
            }
        }
    };
    assert_eq!(found.payload["origin"], "participant");
    assert_eq!(found.payload["target"], "woman");
    assert!(found.tick >= posted_at && found.tick <= posted_at + 1);
    session.stop();
    thread.join().unwrap().unwrap();
}

#[tokio::test]
async fn stream_from_mid_session_is_the_exact_suffix() {
    let (session, thread) = start(Some(60), 0);
    thread.join().unwrap().unwrap();
    let feed_len = session.feed().latest();
    let base = serve(session.clone()).await;
    let suffix = read_lines(&format!("ws://{base}/events?since=40"), feed_len).await;
    let expected: Vec<String> = session.feed().since(40).into_iter().map(|(_, l)| l.to_string()).collect();
    let got: Vec<String> = suffix.iter().map(LogEntry::to_line).collect();
    assert_eq!(got, expected);
    assert_eq!(suffix.first().unwrap().seq, 41);

    // The summary endpoint agrees with a scan of the streamed lines.
    let all = read_lines(&format!("ws://{base}/events?since=0"), feed_len).await;
    let summary: Value = reqwest::get(format!("http://{base}/log/summary")).await.unwrap().json().await.unwrap();
    assert_eq!(summary["entries"], all.len());
    let actions = all.iter().filter(|e| e.category.as_str() == "action").count();
    assert_eq!(summary["categories"]["action"], actions);
}
