//! Loopback ingestion service and operator CLI for the story archive.

pub mod cli;
pub mod config;
pub mod server;
