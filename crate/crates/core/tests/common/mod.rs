#![allow(dead_code)]

use std::path::PathBuf;

use tidal_core::ingest::{ingest_ndjson, Envelope, IngestSummary, PatternTable};
use tidal_core::Archive;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub fn reels_envelope() -> Envelope {
    let line = fixture_text("fx_reels_3users.ndjson");
    Envelope::from_json_slice(line.trim_end().as_bytes()).unwrap()
}

pub fn stream_archive() -> (tempfile::TempDir, Archive, IngestSummary) {
    let dir = tempfile::tempdir().unwrap();
    let archive = Archive::init(dir.path().join("archive")).unwrap();
    let summary =
        ingest_ndjson(&fixture("fx_stream.ndjson"), &PatternTable::default(), &archive).unwrap();
    (dir, archive, summary)
}

pub fn reels_archive() -> (tempfile::TempDir, Archive) {
    let dir = tempfile::tempdir().unwrap();
    let archive = Archive::init(dir.path().join("archive")).unwrap();
    ingest_ndjson(
        &fixture("fx_reels_3users.ndjson"),
        &PatternTable::default(),
        &archive,
    )
    .unwrap();
    (dir, archive)
}
