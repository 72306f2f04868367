//! Shared, append-only copy of the session log for stream clients.

use std::io;
use std::sync::{Arc, RwLock};

use llmscape_core::session_log::LogSink;
use tokio::sync::watch;

struct Inner {
    lines: RwLock<Vec<Arc<str>>>,
    latest: watch::Sender<u64>,
}

/// Every log line written so far, indexed by seq, plus a signal that fires
/// on each append. Clones share the same feed.
#[derive(Clone)]
pub struct EventFeed(Arc<Inner>);

impl Default for EventFeed {
    fn default() -> Self {
        Self::new()
    }
}

impl EventFeed {
    pub fn new() -> Self {
        Self(Arc::new(Inner {
            lines: RwLock::new(Vec::new()),
            latest: watch::Sender::new(0),
        }))
    }

    pub fn push(&self, line: &str) {
        let seq = {
            let mut lines = self.0.lines.write().unwrap_or_else(|e| e.into_inner());
            lines.push(Arc::from(line));
            lines.len() as u64
        };
        self.0.latest.send_replace(seq);
    }

    /// Highest seq appended so far, 0 when empty.
    pub fn latest(&self) -> u64 {
        *self.0.latest.borrow()
    }

    /// Entries with seq greater than `seq`, oldest first.
    pub fn since(&self, seq: u64) -> Vec<(u64, Arc<str>)> {
        let lines = self.0.lines.read().unwrap_or_else(|e| e.into_inner());
        let start = usize::try_from(seq).unwrap_or(usize::MAX).min(lines.len());
        lines[start..]
            .iter()
            .enumerate()
            .map(|(i, l)| ((start + i + 1) as u64, Arc::clone(l)))
            .collect()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.0.latest.subscribe()
    }

    pub fn sink(&self) -> FeedSink {
        FeedSink(self.clone())
    }
}

/// Log sink that appends to an [`EventFeed`].
pub struct FeedSink(EventFeed);

impl LogSink for FeedSink {
    fn write_line(&mut self, line: &str) -> io::Result<()> {
        self.0.push(line);
        Ok(())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}
