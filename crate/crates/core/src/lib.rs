//! Deterministic core of a sandbox world inhabited by memory-driven,
//! language-model agents.

pub mod action;
pub mod gateway;
pub mod memory;
pub mod mind;
pub mod replay;
pub mod scenario;
pub mod session_log;
pub mod sim;
pub mod snapshot;
pub mod world;
