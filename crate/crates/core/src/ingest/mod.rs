//! Accepts intercepted payloads, classifies them and records parsed items.
//!
//! Every envelope whose URL matches a story endpoint is written verbatim to
//! `envelopes/` before it is parsed. Bodies that fail to parse are copied to
//! `rejected/` together with the parser's error, so nothing delivered is lost.

mod envelope;
pub mod har;
mod patterns;

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use envelope::{Envelope, EnvelopeError};
pub use har::{parse_har, HarCapture, HarError};
pub use patterns::{classify_endpoint, EndpointKind, PatternError, PatternTable, DEFAULT_PATTERNS_TOML};

use crate::archive::{Archive, ArchiveError};
use crate::parser::{self, ParseError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestReceipt {
    pub envelope_id: String,
    pub kind: EndpointKind,
    pub items_parsed: usize,
    pub items_new: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct IngestSummary {
    pub envelopes: usize,
    pub parsed: usize,
    pub new: usize,
    pub rejected: usize,
    /// HAR entries without a usable text body.
    pub skipped: usize,
}

impl IngestSummary {
    fn add_receipt(&mut self, r: &IngestReceipt) {
        self.parsed += r.items_parsed;
        self.new += r.items_new;
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid envelope: {0}")]
    Invalid(#[from] EnvelopeError),
    #[error("envelope {envelope_id} ({kind:?}) could not be parsed: {source}")]
    Parse {
        envelope_id: String,
        kind: EndpointKind,
        source: ParseError,
        quarantined_at: PathBuf,
    },
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] HarError),
}

/// Classifies, stores and parses one envelope, recording its items.
pub fn ingest_envelope(
    env: &Envelope,
    table: &PatternTable,
    archive: &Archive,
) -> Result<IngestReceipt, IngestError> {
    env.validate()?;
    let kind = table.classify(&env.source_url);
    let mut receipt = IngestReceipt {
        envelope_id: env.envelope_id.clone(),
        kind,
        items_parsed: 0,
        items_new: 0,
    };
    if kind == EndpointKind::Unrelated {
        return Ok(receipt);
    }

    archive.store_envelope(env)?;

    let parsed = match kind {
        EndpointKind::ReelMedia => parser::parse_reel_payload(&env.body),
        EndpointKind::Highlight => parser::parse_highlight_payload(&env.body),
        EndpointKind::StoryTray => parser::parse_tray_payload(&env.body).map(|tray| {
            tracing::debug!(envelope_id = env.envelope_id, accounts = tray.len(), "story tray");
            Vec::new()
        }),
        EndpointKind::Unrelated => unreachable!(),
    };
    let items = match parsed {
        Ok(items) => items,
        Err(source) => {
            let quarantined_at = archive.quarantine_envelope(env, &source.to_string())?;
            return Err(IngestError::Parse {
                envelope_id: env.envelope_id.clone(),
                kind,
                source,
                quarantined_at,
            });
        }
    };

    receipt.items_parsed = items.len();
    let outcomes = archive.record_envelope_items(
        env.session_id.as_deref(),
        &env.envelope_id,
        env.captured_at,
        items,
    )?;
    receipt.items_new = outcomes.iter().filter(|o| o.is_new_item).count();
    Ok(receipt)
}

/// Replays an NDJSON file of envelopes, one per line.
pub fn ingest_ndjson(
    path: &Path,
    table: &PatternTable,
    archive: &Archive,
) -> Result<IngestSummary, IngestError> {
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut summary = IngestSummary::default();
    let mut line = Vec::new();
    loop {
        line.clear();
        if reader.read_until(b'\n', &mut line).map_err(io_err)? == 0 {
            break;
        }
        let trimmed = trim_line(&line);
        if trimmed.is_empty() {
            continue;
        }
        summary.envelopes += 1;
        match Envelope::from_json_slice(trimmed) {
            Ok(env) => ingest_counted(&env, table, archive, &mut summary)?,
            Err(e) => {
                tracing::warn!(error = %e, "rejecting malformed envelope line");
                archive.quarantine_raw(trimmed, &e.to_string())?;
                summary.rejected += 1;
            }
        }
    }
    Ok(summary)
}

/// Imports a HAR 1.2 capture. Entries with a text body become envelopes.
pub fn ingest_har(
    path: &Path,
    table: &PatternTable,
    archive: &Archive,
) -> Result<IngestSummary, IngestError> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let capture = parse_har(&bytes)?;
    let mut summary = IngestSummary {
        skipped: capture.skipped,
        ..Default::default()
    };
    for (entry, error) in &capture.invalid {
        summary.envelopes += 1;
        summary.rejected += 1;
        let note = format!("HAR entry {entry}: {error}");
        archive.quarantine_raw(note.as_bytes(), &note)?;
    }
    for env in &capture.envelopes {
        summary.envelopes += 1;
        ingest_counted(env, table, archive, &mut summary)?;
    }
    Ok(summary)
}

fn ingest_counted(
    env: &Envelope,
    table: &PatternTable,
    archive: &Archive,
    summary: &mut IngestSummary,
) -> Result<(), IngestError> {
    match ingest_envelope(env, table, archive) {
        Ok(r) => summary.add_receipt(&r),
        Err(IngestError::Parse { .. }) => summary.rejected += 1,
        Err(IngestError::Invalid(e)) => {
            archive.quarantine_raw(env.to_json_line().as_bytes(), &e.to_string())?;
            summary.rejected += 1;
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

fn trim_line(line: &[u8]) -> &[u8] {
    let mut end = line.len();
    while end > 0 && matches!(line[end - 1], b'\n' | b'\r') {
        end -= 1;
    }
    &line[..end]
}
