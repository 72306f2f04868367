//! Network boundary and command line for llmscape sessions.

pub mod api;
pub mod cli;
pub mod feed;
pub mod session;

pub use feed::EventFeed;
pub use session::{launch, RunOptions, SessionHandle, SessionStatus};
