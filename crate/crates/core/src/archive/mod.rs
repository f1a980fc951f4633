//! The local, append-only archive.
//!
//! On-disk layout under the archive root:
//!
//! ```text
//! archive.meta      format name, version, creation time
//! sessions.ndjson   one Session per line
//! items.ndjson      one Observation per line (full item snapshot)
//! media.ndjson      media queue / fetch / failure events
//! envelopes/        raw intercepted payloads, one file per envelope_id
//! rejected/         payloads that could not be parsed
//! media/            downloaded media files
//! export/           CSV exports
//! ```
//!
//! All mutations go through a single writer lock; the in-memory index is
//! updated while that lock is held, so readers always see a state that
//! corresponds to a prefix of the logs.

mod index;

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use index::{Index, ItemEntry, Observation, ObservationKey, ObservationRef, Session};

use crate::ingest::Envelope;
use crate::media::{AssetKey, MediaAsset, MediaEvent};
use crate::model::{Origin, StoryItem};

pub const ARCHIVE_FORMAT: &str = "tidal-archive";
pub const ARCHIVE_VERSION: u32 = 1;

pub(crate) const META_FILE: &str = "archive.meta";
pub(crate) const SESSIONS_LOG: &str = "sessions.ndjson";
pub(crate) const ITEMS_LOG: &str = "items.ndjson";
pub(crate) const MEDIA_LOG: &str = "media.ndjson";
pub(crate) const ENVELOPES_DIR: &str = "envelopes";
pub(crate) const REJECTED_DIR: &str = "rejected";
pub(crate) const MEDIA_DIR: &str = "media";
pub(crate) const EXPORT_DIR: &str = "export";

/// Label of sessions created implicitly when data arrives before any session.
pub const AUTO_SESSION_LABEL: &str = "auto";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("archive version {found} is not supported (expected {ARCHIVE_FORMAT} v{ARCHIVE_VERSION})")]
    IncompatibleVersion { found: String },
    #[error("refusing to initialize {path}: {reason}")]
    InitRefused { path: PathBuf, reason: String },
    #[error("{file} line {line} is corrupt: {message}")]
    CorruptLog {
        file: String,
        line: usize,
        message: String,
    },
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveMeta {
    format: String,
    version: u32,
    created_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RecordOutcome {
    pub is_new_item: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub items: usize,
    pub observations: usize,
    pub sessions: usize,
    pub pending_media: usize,
    /// Latest `observed_at` in the observation log.
    pub last_ingest_at: Option<i64>,
}

/// Canonical item plus everything known about its sightings and media.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemRecord {
    pub item: StoryItem,
    pub first_seen_at: i64,
    pub observations: Vec<ObservationRef>,
    pub assets: Vec<MediaAsset>,
}

/// Conjunctive filter for [`Archive::list_items`].
#[derive(Debug, Clone, Default)]
pub struct ItemFilter {
    /// Session id or session label the item was observed in.
    pub session: Option<String>,
    /// Author id or username (case-insensitive).
    pub author: Option<String>,
    pub origin: Option<Origin>,
    /// Inclusive lower bound on `taken_at`.
    pub since: Option<i64>,
    /// Exclusive upper bound on `taken_at`.
    pub until: Option<i64>,
}

struct Writer {
    sessions: File,
    items: File,
    media: File,
}

/// Handle to an open archive. Cheap to share behind an `Arc`.
pub struct Archive {
    root: PathBuf,
    writer: Mutex<Writer>,
    index: RwLock<Index>,
    pub(crate) inflight: Mutex<HashSet<AssetKey>>,
}

impl std::fmt::Debug for Archive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Archive").field("root", &self.root).finish()
    }
}

impl Archive {
    /// Creates a new archive in an absent or empty directory, or opens an
    /// existing one and rebuilds its index from the logs.
    pub fn init(root: impl AsRef<Path>) -> Result<Self, ArchiveError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let meta_path = root.join(META_FILE);
        if meta_path.exists() {
            let raw = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
            let meta: ArchiveMeta =
                serde_json::from_str(&raw).map_err(|_| ArchiveError::IncompatibleVersion {
                    found: "unreadable archive.meta".into(),
                })?;
            if meta.format != ARCHIVE_FORMAT || meta.version != ARCHIVE_VERSION {
                return Err(ArchiveError::IncompatibleVersion {
                    found: format!("{} v{}", meta.format, meta.version),
                });
            }
        } else {
            let mut entries = fs::read_dir(&root).map_err(io_err(&root))?;
            if let Some(entry) = entries.next() {
                let name = entry
                    .map(|e| e.file_name().to_string_lossy().into_owned())
                    .unwrap_or_default();
                return Err(ArchiveError::InitRefused {
                    path: root,
                    reason: format!("directory is not empty and not an archive (found {name:?})"),
                });
            }
            let meta = ArchiveMeta {
                format: ARCHIVE_FORMAT.into(),
                version: ARCHIVE_VERSION,
                created_at: chrono::Utc::now().timestamp(),
            };
            let text = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
            write_atomic(&meta_path, text.as_bytes())?;
        }

        for dir in [ENVELOPES_DIR, REJECTED_DIR, MEDIA_DIR, EXPORT_DIR] {
            let p = root.join(dir);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }

        let mut index = Index::default();
        for s in read_log::<Session>(&root.join(SESSIONS_LOG))? {
            index.apply_session(s);
        }
        for o in read_log::<Observation>(&root.join(ITEMS_LOG))? {
            index.apply_observation(o);
        }
        for e in read_log::<MediaEvent>(&root.join(MEDIA_LOG))? {
            index.apply_media_event(e);
        }
        index.prune_orphan_assets();

        let writer = Writer {
            sessions: open_append(&root.join(SESSIONS_LOG))?,
            items: open_append(&root.join(ITEMS_LOG))?,
            media: open_append(&root.join(MEDIA_LOG))?,
        };
        let archive = Archive {
            root,
            writer: Mutex::new(writer),
            index: RwLock::new(index),
            inflight: Mutex::new(HashSet::new()),
        };
        archive.requeue_missing_media()?;
        Ok(archive)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub(crate) fn lock_writer(&self) -> WriteGuard<'_> {
        WriteGuard {
            archive: self,
            writer: self.writer.lock().unwrap_or_else(|e| e.into_inner()),
            batch: None,
        }
    }

    pub(crate) fn read_index(&self) -> RwLockReadGuard<'_, Index> {
        self.index.read().unwrap_or_else(|e| e.into_inner())
    }

    /// A copy of the current index.
    pub fn index_snapshot(&self) -> Index {
        self.read_index().clone()
    }

    pub fn begin_session(&self, label: &str, started_at: i64) -> Result<Session, ArchiveError> {
        let mut w = self.lock_writer();
        w.create_session(None, label, started_at)
    }

    pub fn sessions(&self) -> Vec<Session> {
        self.read_index().sessions.clone()
    }

    /// Records one sighting of `item`. A repeated (item, session, envelope)
    /// triple is a no-op.
    pub fn record_observation(
        &self,
        item: StoryItem,
        session_id: &str,
        envelope_id: &str,
        observed_at: i64,
    ) -> Result<RecordOutcome, ArchiveError> {
        let mut w = self.lock_writer();
        if w.index().session(session_id).is_none() {
            return Err(ArchiveError::UnknownSession(session_id.to_string()));
        }
        w.record(item, session_id, envelope_id, observed_at)
    }

    /// Records all items parsed from one envelope under a single writer lock.
    ///
    /// `session_hint` names the session the capture client attributed the
    /// envelope to; unknown names are registered on first use. Without a hint
    /// the most recent session is used, and an `auto` session is created if the
    /// archive has none.
    pub fn record_envelope_items(
        &self,
        session_hint: Option<&str>,
        envelope_id: &str,
        observed_at: i64,
        items: Vec<StoryItem>,
    ) -> Result<Vec<RecordOutcome>, ArchiveError> {
        let mut w = self.lock_writer();
        w.begin_batch();
        let session_id = w.resolve_session(session_hint, observed_at)?;
        items
            .into_iter()
            .map(|item| w.record(item, &session_id, envelope_id, observed_at))
            .collect()
    }

    /// Persists the raw envelope before parsing. Existing files are left alone.
    pub fn store_envelope(&self, env: &Envelope) -> Result<(), ArchiveError> {
        let _w = self.lock_writer();
        let path = self
            .root
            .join(ENVELOPES_DIR)
            .join(format!("{}.json", env.envelope_id));
        if path.exists() {
            return Ok(());
        }
        let mut line = env.to_json_line();
        line.push('\n');
        write_atomic(&path, line.as_bytes())
    }

    /// Writes a rejected envelope with the reason it was rejected.
    pub fn quarantine_envelope(&self, env: &Envelope, error: &str) -> Result<PathBuf, ArchiveError> {
        let doc = serde_json::json!({ "error": error, "envelope": env });
        self.write_rejected(&env.envelope_id, &doc)
    }

    /// Writes an input fragment that could not even be decoded as an envelope.
    pub fn quarantine_raw(&self, raw: &[u8], error: &str) -> Result<PathBuf, ArchiveError> {
        let digest = hex::encode(Sha256::digest(raw));
        let doc = serde_json::json!({
            "error": error,
            "raw": String::from_utf8_lossy(raw),
        });
        self.write_rejected(&format!("raw-{}", &digest[..16]), &doc)
    }

    fn write_rejected(&self, name: &str, doc: &serde_json::Value) -> Result<PathBuf, ArchiveError> {
        let _w = self.lock_writer();
        let path = self.root.join(REJECTED_DIR).join(format!("{name}.json"));
        let text = serde_json::to_string_pretty(doc).expect("json serializes") + "\n";
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn get_item(&self, item_id: &str) -> Result<ItemRecord, ArchiveError> {
        let idx = self.read_index();
        let entry = idx
            .items
            .get(item_id)
            .ok_or_else(|| ArchiveError::UnknownItem(item_id.to_string()))?;
        let assets = idx
            .assets
            .values()
            .filter(|a| a.item_id == item_id)
            .cloned()
            .collect();
        Ok(ItemRecord {
            item: entry.canonical.item.clone(),
            first_seen_at: entry.first_seen_at,
            observations: entry.history.clone(),
            assets,
        })
    }

    /// Canonical items matching `filter`, ordered by (taken_at, item_id).
    pub fn list_items(&self, filter: &ItemFilter) -> Vec<StoryItem> {
        let idx = self.read_index();
        let session_ids: Option<HashSet<&str>> = filter.session.as_deref().map(|s| {
            idx.sessions
                .iter()
                .filter(|x| x.session_id == s || x.label == s)
                .map(|x| x.session_id.as_str())
                .collect()
        });
        let author = filter.author.as_deref().map(str::to_lowercase);
        let mut out: Vec<StoryItem> = idx
            .items
            .values()
            .filter(|e| {
                let item = &e.canonical.item;
                if let Some(ids) = &session_ids {
                    if !e.history.iter().any(|h| ids.contains(h.session_id.as_str())) {
                        return false;
                    }
                }
                if let Some(a) = &author {
                    if item.author_id != *a && item.author_username.to_lowercase() != *a {
                        return false;
                    }
                }
                filter.origin.is_none_or(|o| item.origin == o)
                    && filter.since.is_none_or(|s| item.taken_at >= s)
                    && filter.until.is_none_or(|u| item.taken_at < u)
            })
            .map(|e| e.canonical.item.clone())
            .collect();
        out.sort_by(|a, b| (a.taken_at, &a.item_id).cmp(&(b.taken_at, &b.item_id)));
        out
    }

    pub fn stats(&self) -> Stats {
        let idx = self.read_index();
        Stats {
            items: idx.items.len(),
            observations: idx.observation_count,
            sessions: idx.sessions.len(),
            pending_media: idx
                .assets
                .values()
                .filter(|a| a.status == crate::media::AssetStatus::Pending)
                .count(),
            last_ingest_at: idx.last_observed_at,
        }
    }

    /// Every media asset known to the archive, in key order.
    pub fn assets(&self) -> Vec<MediaAsset> {
        self.read_index().assets.values().cloned().collect()
    }

    fn requeue_missing_media(&self) -> Result<(), ArchiveError> {
        let mut w = self.lock_writer();
        let missing: Vec<StoryItem> = {
            let idx = w.index();
            idx.items
                .values()
                .filter(|e| !idx.assets.keys().any(|k| k.item_id == e.canonical.item_id))
                .map(|e| e.canonical.item.clone())
                .collect()
        };
        for item in missing {
            w.enqueue_media(&item)?;
        }
        Ok(())
    }
}

/// Exclusive access to the logs; keeps the index in step with every append.
pub(crate) struct WriteGuard<'a> {
    archive: &'a Archive,
    writer: MutexGuard<'a, Writer>,
    /// Held for the duration of a batch so readers see all of it or none.
    batch: Option<RwLockWriteGuard<'a, Index>>,
}

pub(crate) enum IndexView<'g> {
    Shared(RwLockReadGuard<'g, Index>),
    Batch(&'g Index),
}

impl std::ops::Deref for IndexView<'_> {
    type Target = Index;

    fn deref(&self) -> &Index {
        match self {
            IndexView::Shared(g) => g,
            IndexView::Batch(i) => i,
        }
    }
}

impl<'a> WriteGuard<'a> {
    pub(crate) fn index(&self) -> IndexView<'_> {
        match &self.batch {
            Some(g) => IndexView::Batch(g),
            None => IndexView::Shared(self.archive.read_index()),
        }
    }

    fn update_index<R>(&mut self, f: impl FnOnce(&mut Index) -> R) -> R {
        match &mut self.batch {
            Some(g) => f(g),
            None => f(&mut self.archive.index.write().unwrap_or_else(|e| e.into_inner())),
        }
    }

    /// Defers index visibility until the guard is dropped.
    fn begin_batch(&mut self) {
        if self.batch.is_none() {
            self.batch = Some(self.archive.index.write().unwrap_or_else(|e| e.into_inner()));
        }
    }

    fn create_session(
        &mut self,
        id: Option<&str>,
        label: &str,
        started_at: i64,
    ) -> Result<Session, ArchiveError> {
        let (session_id, clock_skew) = {
            let idx = self.index();
            let id = match id {
                Some(id) => id.to_string(),
                None => {
                    let mut n = idx.sessions.len() + 1;
                    loop {
                        let candidate = format!("s{n:04}");
                        if idx.session(&candidate).is_none() {
                            break candidate;
                        }
                        n += 1;
                    }
                }
            };
            let skew = idx
                .sessions
                .last()
                .is_some_and(|prev| started_at < prev.started_at);
            (id, skew)
        };
        if clock_skew {
            tracing::warn!(session_id, started_at, "session starts before its predecessor (clock skew)");
        }
        let session = Session {
            session_id,
            started_at,
            label: label.to_string(),
            clock_skew,
        };
        let root = self.archive.root.join(SESSIONS_LOG);
        append_record(&mut self.writer.sessions, &root, &session)?;
        self.update_index(|idx| idx.apply_session(session.clone()));
        Ok(session)
    }

    fn resolve_session(&mut self, hint: Option<&str>, observed_at: i64) -> Result<String, ArchiveError> {
        match hint {
            Some(id) => {
                if self.index().session(id).is_none() {
                    self.create_session(Some(id), id, observed_at)?;
                }
                Ok(id.to_string())
            }
            None => {
                let latest = self.index().sessions.last().map(|s| s.session_id.clone());
                match latest {
                    Some(id) => Ok(id),
                    None => Ok(self
                        .create_session(None, AUTO_SESSION_LABEL, observed_at)?
                        .session_id),
                }
            }
        }
    }

    fn record(
        &mut self,
        item: StoryItem,
        session_id: &str,
        envelope_id: &str,
        observed_at: i64,
    ) -> Result<RecordOutcome, ArchiveError> {
        // a live item cannot be seen before it was posted; treat earlier
        // capture clocks as skewed
        let observed_at = match item.origin {
            Origin::Live => observed_at.max(item.taken_at),
            Origin::Highlight => observed_at,
        };
        let obs = Observation {
            item_id: item.item_id.clone(),
            session_id: session_id.to_string(),
            envelope_id: envelope_id.to_string(),
            observed_at,
            item,
        };
        if self.index().has_observation(&obs.key()) {
            return Ok(RecordOutcome { is_new_item: false });
        }
        let path = self.archive.root.join(ITEMS_LOG);
        append_record(&mut self.writer.items, &path, &obs)?;
        let snapshot = obs.item.clone();
        let is_new_item = self.update_index(|idx| idx.apply_observation(obs));
        if is_new_item {
            self.enqueue_media(&snapshot)?;
        }
        Ok(RecordOutcome { is_new_item })
    }

    /// Appends a media event and applies it to the index.
    pub(crate) fn media_event(&mut self, event: MediaEvent) -> Result<(), ArchiveError> {
        let path = self.archive.root.join(MEDIA_LOG);
        append_record(&mut self.writer.media, &path, &event)?;
        self.update_index(|idx| idx.apply_media_event(event));
        Ok(())
    }
}

fn open_append(path: &Path) -> Result<File, ArchiveError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))
}

fn append_record<T: Serialize>(file: &mut File, path: &Path, record: &T) -> Result<(), ArchiveError> {
    let mut line = serde_json::to_vec(record).expect("record serializes");
    line.push(b'\n');
    file.write_all(&line).map_err(io_err(path))
}

/// Reads an NDJSON log. An unterminated final line is the remnant of an
/// interrupted append: it is completed if it parses and cut off otherwise.
fn read_log<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ArchiveError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let file = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let mut records = Vec::new();
    for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let rec = serde_json::from_slice(line).map_err(|e| ArchiveError::CorruptLog {
            file: file.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    let tail = &bytes[complete..];
    if !tail.is_empty() {
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        match serde_json::from_slice::<T>(tail) {
            Ok(rec) => {
                records.push(rec);
                let mut f = f;
                use std::io::Seek;
                f.seek(io::SeekFrom::End(0)).map_err(io_err(path))?;
                f.write_all(b"\n").map_err(io_err(path))?;
            }
            Err(_) => {
                tracing::warn!(file, bytes = tail.len(), "dropping torn record at end of log");
                f.set_len(complete as u64).map_err(io_err(path))?;
            }
        }
    }
    Ok(records)
}

/// Writes through a temporary sibling and renames into place.
pub(crate) fn write_atomic(path: &Path, data: &[u8]) -> Result<(), ArchiveError> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, data).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}
