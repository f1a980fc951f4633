//! Local-first archiving of ephemeral stories.
//!
//! Intercepted API responses arrive as [`ingest::Envelope`]s, are classified
//! by URL, parsed into [`model::StoryItem`]s and recorded as observations in
//! an append-only [`archive::Archive`]. Media is downloaded by
//! [`media::fetch_pending`], canonical items are exported with
//! [`export::export_csv`], and [`schedule`] answers how often to capture.

pub mod archive;
pub mod export;
pub mod ingest;
pub mod media;
pub mod model;
pub mod parser;
pub mod schedule;

pub use archive::{Archive, ArchiveError, ItemFilter, Stats};
pub use ingest::{Envelope, EndpointKind, IngestReceipt, IngestSummary, PatternTable};
pub use model::{Sticker, StoryItem};
