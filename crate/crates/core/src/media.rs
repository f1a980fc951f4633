//! Media download queue.
//!
//! New items enqueue their best primary rendition (and the poster frame for
//! videos). `fetch_pending` downloads queued assets with bounded parallelism
//! and retries; files land in `media/.tmp/` first and are hard-linked into
//! their final name, which never replaces an existing file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::archive::{Archive, ArchiveError, WriteGuard, MEDIA_DIR};
use crate::model::{MediaKind, MediaRole, StoryItem};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AssetKey {
    pub item_id: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum AssetStatus {
    Pending,
    Fetched,
    Failed { attempts: u32, last_error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaAsset {
    pub item_id: String,
    pub url: String,
    /// Position within the item: 0 for the primary rendition, 1 for the poster.
    pub ordinal: u32,
    pub role: MediaRole,
    /// Relative to the archive root.
    pub local_path: Option<String>,
    /// Lowercase hex SHA-256 of the stored file.
    pub content_hash: Option<String>,
    pub bytes: Option<u64>,
    pub fetched_at: Option<i64>,
    pub status: AssetStatus,
}

impl MediaAsset {
    pub fn key(&self) -> AssetKey {
        AssetKey {
            item_id: self.item_id.clone(),
            url: self.url.clone(),
        }
    }
}

/// Records in `media.ndjson`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MediaEvent {
    Queued {
        item_id: String,
        url: String,
        ordinal: u32,
        role: MediaRole,
    },
    Fetched {
        item_id: String,
        url: String,
        local_path: String,
        content_hash: String,
        bytes: u64,
        fetched_at: i64,
        attempts: u32,
    },
    Failed {
        item_id: String,
        url: String,
        attempts: u32,
        last_error: String,
    },
}

#[derive(Debug, Error)]
pub enum MediaError {
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("http client setup failed: {0}")]
    Client(String),
    #[error("concurrency must be positive")]
    ZeroConcurrency,
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub concurrency: usize,
    pub max_retries: u32,
    pub timeout: Duration,
    pub backoff_base: Duration,
    pub backoff_factor: f64,
    /// Relative jitter applied to each backoff delay (0.2 = ±20%).
    pub jitter: f64,
    /// Also retry assets that failed in an earlier run.
    pub retry_failed: bool,
}

impl Default for FetchOptions {
    fn default() -> Self {
        Self {
            concurrency: 4,
            max_retries: 3,
            timeout: Duration::from_secs(30),
            backoff_base: Duration::from_millis(500),
            backoff_factor: 2.0,
            jitter: 0.2,
            retry_failed: false,
        }
    }
}

impl FetchOptions {
    /// Delay before retry number `retry` (1-based), without jitter.
    pub fn nominal_backoff(&self, retry: u32) -> Duration {
        self.backoff_base
            .mul_f64(self.backoff_factor.powi(retry.saturating_sub(1) as i32))
    }

    fn jittered_backoff(&self, retry: u32) -> Duration {
        let spread = self.jitter.clamp(0.0, 1.0);
        let factor = if spread > 0.0 {
            1.0 + rand::rng().random_range(-spread..=spread)
        } else {
            1.0
        };
        self.nominal_backoff(retry).mul_f64(factor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct FetchReport {
    pub considered: usize,
    pub fetched: usize,
    pub failed: usize,
    /// Assets another fetch run was already working on.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "problem", rename_all = "snake_case")]
pub enum DiscrepancyKind {
    Missing,
    SizeMismatch { expected: u64, actual: u64 },
    HashMismatch { expected: String, actual: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Discrepancy {
    pub item_id: String,
    pub url: String,
    pub local_path: String,
    #[serde(flatten)]
    pub kind: DiscrepancyKind,
}

impl WriteGuard<'_> {
    pub(crate) fn enqueue_media(&mut self, item: &StoryItem) -> Result<usize, ArchiveError> {
        if !self.index().items.contains_key(&item.item_id) {
            return Err(ArchiveError::UnknownItem(item.item_id.clone()));
        }
        let mut wanted = Vec::new();
        if let Some(best) = item.best_media() {
            wanted.push((0, best.clone()));
        }
        if item.media_kind == MediaKind::Video {
            if let Some(poster) = item.best_poster() {
                wanted.push((1, poster.clone()));
            }
        }
        let mut queued = 0;
        for (ordinal, m) in wanted {
            let key = AssetKey {
                item_id: item.item_id.clone(),
                url: m.url.clone(),
            };
            if self.index().assets.contains_key(&key) {
                continue;
            }
            self.media_event(MediaEvent::Queued {
                item_id: key.item_id,
                url: key.url,
                ordinal,
                role: m.role,
            })?;
            queued += 1;
        }
        Ok(queued)
    }
}

impl Archive {
    /// Queues downloads for a recorded item. Returns how many assets were newly
    /// queued; assets already known for the item are not queued again.
    pub fn enqueue_media(&self, item: &StoryItem) -> Result<usize, ArchiveError> {
        self.lock_writer().enqueue_media(item)
    }

    fn claim_assets(&self, retry_failed: bool) -> (Vec<MediaAsset>, usize) {
        // held while reading statuses so a finishing run cannot release an
        // asset between our read and our claim
        let mut inflight = self.inflight.lock().unwrap_or_else(|e| e.into_inner());
        let candidates: Vec<MediaAsset> = self
            .read_index()
            .assets
            .values()
            .filter(|a| match a.status {
                AssetStatus::Pending => true,
                AssetStatus::Failed { .. } => retry_failed,
                AssetStatus::Fetched => false,
            })
            .cloned()
            .collect();
        let mut claimed = Vec::new();
        let mut skipped = 0;
        for a in candidates {
            if inflight.insert(a.key()) {
                claimed.push(a);
            } else {
                skipped += 1;
            }
        }
        (claimed, skipped)
    }

    fn release_claim(&self, key: &AssetKey) {
        self.inflight
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(key);
    }
}

/// Queues an item's media; see [`Archive::enqueue_media`].
pub fn enqueue_media(archive: &Archive, item: &StoryItem) -> Result<usize, ArchiveError> {
    archive.enqueue_media(item)
}

enum Outcome {
    Fetched {
        local_path: String,
        content_hash: String,
        bytes: u64,
        attempts: u32,
    },
    Failed {
        attempts: u32,
        error: String,
    },
}

/// Downloads every pending asset. Individual failures are recorded on the
/// asset and never abort the batch.
pub async fn fetch_pending(archive: &Archive, opts: &FetchOptions) -> Result<FetchReport, MediaError> {
    if opts.concurrency == 0 {
        return Err(MediaError::ZeroConcurrency);
    }
    let client = reqwest::Client::builder()
        .timeout(opts.timeout)
        .build()
        .map_err(|e| MediaError::Client(e.to_string()))?;

    let (claimed, skipped) = archive.claim_assets(opts.retry_failed);
    let mut report = FetchReport {
        considered: claimed.len() + skipped,
        skipped,
        ..Default::default()
    };
    let root = archive.root().to_path_buf();

    let mut results = stream::iter(claimed)
        .map(|asset| {
            let client = client.clone();
            let root = root.clone();
            async move {
                let outcome = download(&client, &root, &asset, opts).await;
                (asset, outcome)
            }
        })
        .buffer_unordered(opts.concurrency);

    let mut first_err = None;
    while let Some((asset, outcome)) = results.next().await {
        let event = match outcome {
            Outcome::Fetched {
                local_path,
                content_hash,
                bytes,
                attempts,
            } => {
                report.fetched += 1;
                MediaEvent::Fetched {
                    item_id: asset.item_id.clone(),
                    url: asset.url.clone(),
                    local_path,
                    content_hash,
                    bytes,
                    fetched_at: chrono::Utc::now().timestamp(),
                    attempts,
                }
            }
            Outcome::Failed { attempts, error } => {
                report.failed += 1;
                tracing::warn!(item_id = asset.item_id, url = asset.url, attempts, error, "media download failed");
                MediaEvent::Failed {
                    item_id: asset.item_id.clone(),
                    url: asset.url.clone(),
                    attempts,
                    last_error: error,
                }
            }
        };
        if let Err(e) = archive.lock_writer().media_event(event) {
            first_err.get_or_insert(e);
        }
        archive.release_claim(&asset.key());
    }
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(report),
    }
}

async fn download(
    client: &reqwest::Client,
    root: &Path,
    asset: &MediaAsset,
    opts: &FetchOptions,
) -> Outcome {
    let max_attempts = opts.max_retries.saturating_add(1);
    let mut attempts = 0;
    let mut last_error = String::new();
    while attempts < max_attempts {
        if attempts > 0 {
            tokio::time::sleep(opts.jittered_backoff(attempts)).await;
        }
        attempts += 1;
        let (retryable, error) = match client.get(&asset.url).send().await {
            Ok(resp) if resp.status().is_success() => {
                let ext = extension_for(
                    resp.headers()
                        .get(reqwest::header::CONTENT_TYPE)
                        .and_then(|v| v.to_str().ok()),
                );
                match resp.bytes().await {
                    Ok(body) => match store(root, asset, ext, &body).await {
                        Ok((local_path, content_hash)) => {
                            return Outcome::Fetched {
                                local_path,
                                content_hash,
                                bytes: body.len() as u64,
                                attempts,
                            }
                        }
                        Err(e) => (false, e),
                    },
                    Err(e) => (true, format!("reading body: {e}")),
                }
            }
            Ok(resp) => {
                let status = resp.status();
                let retryable = status.is_server_error() || status.as_u16() == 429;
                (retryable, format!("HTTP {}", status.as_u16()))
            }
            Err(e) => (true, format!("request failed: {e}")),
        };
        last_error = error;
        if !retryable {
            break;
        }
    }
    Outcome::Failed {
        attempts,
        error: last_error,
    }
}

/// Writes the body to a temp file and links it to its final name.
async fn store(
    root: &Path,
    asset: &MediaAsset,
    ext: &str,
    body: &[u8],
) -> Result<(String, String), String> {
    let media_dir = root.join(MEDIA_DIR);
    let tmp_dir = media_dir.join(".tmp");
    tokio::fs::create_dir_all(&tmp_dir)
        .await
        .map_err(|e| format!("creating {}: {e}", tmp_dir.display()))?;

    let name = format!("{}_{}.{ext}", file_stem(&asset.item_id), asset.ordinal);
    let relative = format!("{MEDIA_DIR}/{name}");
    let final_path = media_dir.join(&name);
    let tmp_path: PathBuf = tmp_dir.join(format!(
        "{name}.{}.{:016x}",
        std::process::id(),
        rand::rng().random::<u64>()
    ));
    let hash = hex::encode(Sha256::digest(body));

    tokio::fs::write(&tmp_path, body)
        .await
        .map_err(|e| format!("writing {}: {e}", tmp_path.display()))?;
    let linked = tokio::fs::hard_link(&tmp_path, &final_path).await;
    let _ = tokio::fs::remove_file(&tmp_path).await;
    match linked {
        Ok(()) => Ok((relative, hash)),
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
            // someone stored this asset already; accept it only if identical
            let existing = tokio::fs::read(&final_path)
                .await
                .map_err(|e| format!("reading {}: {e}", final_path.display()))?;
            if hex::encode(Sha256::digest(&existing)) == hash {
                Ok((relative, hash))
            } else {
                Err(format!("{relative} exists with different content"))
            }
        }
        Err(e) => Err(format!("storing {relative}: {e}")),
    }
}

/// File extension for a response content type.
pub fn extension_for(content_type: Option<&str>) -> &'static str {
    let mime = content_type
        .and_then(|c| c.split(';').next())
        .map(|c| c.trim().to_ascii_lowercase());
    match mime.as_deref() {
        Some("image/jpeg") | Some("image/jpg") => "jpg",
        Some("image/png") => "png",
        Some("video/mp4") => "mp4",
        Some("image/webp") => "webp",
        _ => "bin",
    }
}

fn file_stem(item_id: &str) -> String {
    item_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Re-hashes every fetched file. Read-only.
pub fn verify_media(archive: &Archive) -> Vec<Discrepancy> {
    let root = archive.root();
    let mut out = Vec::new();
    for asset in archive.assets() {
        if asset.status != AssetStatus::Fetched {
            continue;
        }
        let (Some(rel), Some(expected_hash), Some(expected_len)) =
            (&asset.local_path, &asset.content_hash, asset.bytes)
        else {
            continue;
        };
        let mk = |kind| Discrepancy {
            item_id: asset.item_id.clone(),
            url: asset.url.clone(),
            local_path: rel.clone(),
            kind,
        };
        let data = match std::fs::read(root.join(rel)) {
            Ok(d) => d,
            Err(_) => {
                out.push(mk(DiscrepancyKind::Missing));
                continue;
            }
        };
        if data.len() as u64 != expected_len {
            out.push(mk(DiscrepancyKind::SizeMismatch {
                expected: expected_len,
                actual: data.len() as u64,
            }));
            continue;
        }
        let actual = hex::encode(Sha256::digest(&data));
        if &actual != expected_hash {
            out.push(mk(DiscrepancyKind::HashMismatch {
                expected: expected_hash.clone(),
                actual,
            }));
        }
    }
    out
}
