//! Runs a simulation on its own thread and publishes its state.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use llmscape_core::session_log::LogSummary;
use llmscape_core::sim::{Inbox, SimError, Simulation};
use llmscape_core::snapshot::StateSnapshot;
use serde::Serialize;

use crate::feed::EventFeed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionStatus {
    pub scenario: String,
    pub seed: u64,
    pub tick: u64,
    pub running: bool,
    pub digest: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Stop after this many ticks; `None` runs until stopped.
    pub ticks: Option<u64>,
    /// Pause between ticks.
    pub tick_interval: Duration,
    /// Block size for the terrain in snapshots.
    pub snapshot_factor: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            ticks: None,
            tick_interval: Duration::ZERO,
            snapshot_factor: 1,
        }
    }
}

struct Shared {
    snapshot: RwLock<StateSnapshot>,
    summary: RwLock<LogSummary>,
    status: RwLock<SessionStatus>,
    inbox: Inbox,
    feed: EventFeed,
    speaker: String,
    stop: AtomicBool,
}

/// Read side of a running session. Cheap to clone.
#[derive(Clone)]
pub struct SessionHandle(Arc<Shared>);

fn read<T: Clone>(lock: &RwLock<T>) -> T {
    lock.read().unwrap_or_else(|e| e.into_inner()).clone()
}

fn write<T>(lock: &RwLock<T>, f: impl FnOnce(&mut T)) {
    f(&mut lock.write().unwrap_or_else(|e| e.into_inner()));
}

impl SessionHandle {
    pub fn snapshot(&self) -> StateSnapshot {
        read(&self.0.snapshot)
    }

    pub fn summary(&self) -> LogSummary {
        read(&self.0.summary)
    }

    pub fn status(&self) -> SessionStatus {
        read(&self.0.status)
    }

    pub fn inbox(&self) -> &Inbox {
        &self.0.inbox
    }

    pub fn feed(&self) -> &EventFeed {
        &self.0.feed
    }

    /// Label used for utterances that do not name a speaker.
    pub fn default_speaker(&self) -> &str {
        &self.0.speaker
    }

    pub fn is_running(&self) -> bool {
        self.status().running
    }

    /// Asks the tick loop to finish after the current tick.
    pub fn stop(&self) {
        self.0.stop.store(true, Ordering::SeqCst);
    }
}

/// Starts `sim` on a dedicated thread. The thread returns the final digest.
pub fn launch(mut sim: Simulation, opts: RunOptions) -> (SessionHandle, JoinHandle<Result<String, SimError>>) {
    let feed = EventFeed::new();
    sim.add_log_sink(feed.sink());
    let speaker = sim
        .participants()
        .first()
        .map_or_else(|| "participant".to_owned(), |p| p.as_str().to_owned());
    let shared = Arc::new(Shared {
        snapshot: RwLock::new(StateSnapshot::capture(&sim, opts.snapshot_factor)),
        summary: RwLock::new(LogSummary::default()),
        status: RwLock::new(SessionStatus {
            scenario: sim.scenario_name().to_owned(),
            seed: sim.seed(),
            tick: sim.clock().tick(),
            running: true,
            digest: None,
            error: None,
        }),
        inbox: sim.inbox(),
        feed,
        speaker,
        stop: AtomicBool::new(false),
    });
    let handle = SessionHandle(shared.clone());
    let thread = std::thread::spawn(move || {
        let result = drive(&mut sim, &shared, &opts);
        write(&shared.status, |s| {
            s.running = false;
            s.tick = sim.clock().tick();
            match &result {
                Ok(d) => s.digest = Some(d.clone()),
                Err(e) => s.error = Some(e.to_string()),
            }
        });
        result
    });
    (handle, thread)
}

fn drive(sim: &mut Simulation, shared: &Shared, opts: &RunOptions) -> Result<String, SimError> {
    let header = sim.start()?;
    write(&shared.summary, |s| header.iter().for_each(|e| s.add(e)));
    loop {
        if shared.stop.load(Ordering::SeqCst) || opts.ticks.is_some_and(|n| sim.clock().tick() >= n) {
            break;
        }
        let report = sim.tick()?;
        write(&shared.summary, |s| report.entries.iter().for_each(|e| s.add(e)));
        let snap = StateSnapshot::capture(sim, opts.snapshot_factor);
        write(&shared.snapshot, |s| *s = snap);
        write(&shared.status, |s| s.tick = report.tick);
        if !opts.tick_interval.is_zero() {
            std::thread::sleep(opts.tick_interval);
        }
    }
    let (digest, tail) = sim.finish()?;
    write(&shared.summary, |s| tail.iter().for_each(|e| s.add(e)));
    Ok(digest)
}
