//! CSV export of canonical items.
//!
//! One row per item, ordered by (taken_at, item_id), RFC 4180 with CRLF line
//! endings. Column order is fixed by [`CSV_COLUMNS`]; any change to it is a
//! format change and must be reflected in `docs/csv-columns.md`.

use std::collections::HashMap;
use std::io::Write;

use chrono::{DateTime, SecondsFormat};
use hmac::{Hmac, Mac};
use sha2::Sha256;
use thiserror::Error;

use crate::archive::Archive;
use crate::media::AssetStatus;
use crate::model::{Sticker, StoryItem};

pub const CSV_COLUMNS: [&str; 21] = [
    "item_id",
    "author_id",
    "author_username",
    "taken_at_iso8601",
    "expiring_at_iso8601",
    "media_kind",
    "media_local_path",
    "media_url",
    "width",
    "height",
    "duration_s",
    "origin",
    "highlight_id",
    "caption",
    "sticker_count",
    "poll_question",
    "poll_options",
    "mention_usernames",
    "hashtags",
    "link_url",
    "stickers_json",
];

/// Columns that hold account names and are rewritten when pseudonymizing.
pub const NAME_COLUMNS: [&str; 3] = ["author_username", "mention_usernames", "stickers_json"];

pub const MIN_KEY_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("pseudonymization requested but no key is configured")]
    MissingKey,
    #[error("pseudonym key must be at least {MIN_KEY_LEN} bytes, got {0}")]
    KeyTooShort(usize),
    #[error("writing CSV failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing CSV failed: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Default)]
pub struct ExportConfig {
    pub pseudonymize: bool,
    pub pseudonym_key: Option<Vec<u8>>,
}

impl ExportConfig {
    pub fn plain() -> Self {
        Self::default()
    }

    pub fn pseudonymized(key: impl Into<Vec<u8>>) -> Self {
        Self {
            pseudonymize: true,
            pseudonym_key: Some(key.into()),
        }
    }

    fn active_key(&self) -> Result<Option<&[u8]>, ExportError> {
        if let Some(k) = &self.pseudonym_key {
            if k.len() < MIN_KEY_LEN {
                return Err(ExportError::KeyTooShort(k.len()));
            }
        }
        if !self.pseudonymize {
            return Ok(None);
        }
        self.pseudonym_key
            .as_deref()
            .map(Some)
            .ok_or(ExportError::MissingKey)
    }
}

/// Stable keyed token for a username: `u_` followed by the first 16 hex
/// characters of HMAC-SHA256(key, lowercase(username)).
pub fn pseudonymize_username(username: &str, key: &[u8]) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(username.to_lowercase().as_bytes());
    let digest = hex::encode(mac.finalize().into_bytes());
    format!("u_{}", &digest[..16])
}

fn iso8601(t: i64) -> String {
    DateTime::from_timestamp(t, 0)
        .map(|d| d.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_default()
}

/// Writes the CSV export and returns the number of data rows.
pub fn export_csv<W: Write>(
    archive: &Archive,
    config: &ExportConfig,
    out: W,
) -> Result<usize, ExportError> {
    let key = config.active_key()?;

    // one consistent view of items and media
    let (items, local_paths) = {
        let idx = archive.read_index();
        let mut paths: HashMap<String, String> = HashMap::new();
        for a in idx.assets.values() {
            if a.ordinal == 0 && a.status == AssetStatus::Fetched {
                if let Some(p) = &a.local_path {
                    paths.insert(a.item_id.clone(), p.clone());
                }
            }
        }
        let mut items: Vec<StoryItem> = idx.items.values().map(|e| e.canonical.item.clone()).collect();
        items.sort_by(|a, b| (a.taken_at, &a.item_id).cmp(&(b.taken_at, &b.item_id)));
        (items, paths)
    };

    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for item in &items {
        w.write_record(row(item, local_paths.get(&item.item_id), key))?;
    }
    w.flush()?;
    Ok(items.len())
}

fn row(item: &StoryItem, local_path: Option<&String>, key: Option<&[u8]>) -> Vec<String> {
    let name = |n: &str| match key {
        Some(k) => pseudonymize_username(n, k),
        None => n.to_string(),
    };
    let stickers: Vec<Sticker> = item
        .stickers
        .iter()
        .map(|s| match s {
            Sticker::Mention { username } => Sticker::Mention {
                username: name(username),
            },
            other => other.clone(),
        })
        .collect();

    let first_poll = stickers.iter().find_map(|s| match s {
        Sticker::Poll { question, options } => Some((question, options)),
        _ => None,
    });
    let mentions: Vec<&str> = stickers
        .iter()
        .filter_map(|s| match s {
            Sticker::Mention { username } => Some(username.as_str()),
            _ => None,
        })
        .collect();
    let hashtags: Vec<&str> = stickers
        .iter()
        .filter_map(|s| match s {
            Sticker::Hashtag { tag } => Some(tag.as_str()),
            _ => None,
        })
        .collect();
    let link = stickers.iter().find_map(|s| match s {
        Sticker::Link { url, .. } => Some(url.clone()),
        _ => None,
    });
    let best = item.best_media();

    vec![
        item.item_id.clone(),
        item.author_id.clone(),
        name(&item.author_username),
        iso8601(item.taken_at),
        iso8601(item.expiring_at),
        item.media_kind.as_str().to_string(),
        local_path.cloned().unwrap_or_default(),
        best.map(|m| m.url.clone()).unwrap_or_default(),
        best.map(|m| m.width.to_string()).unwrap_or_default(),
        best.map(|m| m.height.to_string()).unwrap_or_default(),
        item.duration_s.to_string(),
        item.origin.as_str().to_string(),
        item.highlight_id.clone().unwrap_or_default(),
        item.caption.clone().unwrap_or_default(),
        stickers.len().to_string(),
        first_poll.map(|(q, _)| q.clone()).unwrap_or_default(),
        first_poll
            .map(|(_, opts)| opts.iter().map(|o| o.text.as_str()).collect::<Vec<_>>().join(";"))
            .unwrap_or_default(),
        mentions.join(";"),
        hashtags.join(";"),
        link.unwrap_or_default(),
        serde_json::to_string(&stickers).expect("stickers serialize"),
    ]
}
