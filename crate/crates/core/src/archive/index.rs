//! In-memory view of the archive logs.
//!
//! The index is a pure fold over the three logs. The writer applies each
//! record right after appending it, and `Archive::init` replays the logs
//! through the same functions, so the two always agree.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::media::{AssetKey, AssetStatus, MediaAsset, MediaEvent};
use crate::model::StoryItem;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub started_at: i64,
    pub label: String,
    /// Set when the session started earlier than its predecessor.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clock_skew: bool,
}

/// One sighting of a story item during a capture session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub item_id: String,
    pub session_id: String,
    pub envelope_id: String,
    pub observed_at: i64,
    pub item: StoryItem,
}

impl Observation {
    pub fn key(&self) -> ObservationKey {
        (
            self.item_id.clone(),
            self.session_id.clone(),
            self.envelope_id.clone(),
        )
    }
}

/// (item_id, session_id, envelope_id)
pub type ObservationKey = (String, String, String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationRef {
    pub session_id: String,
    pub envelope_id: String,
    pub observed_at: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemEntry {
    pub first_seen_at: i64,
    /// Latest snapshot by `observed_at`; later log entries win ties.
    pub canonical: Observation,
    pub history: Vec<ObservationRef>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Index {
    pub(crate) sessions: Vec<Session>,
    pub(crate) items: BTreeMap<String, ItemEntry>,
    pub(crate) observation_keys: HashSet<ObservationKey>,
    pub(crate) observation_count: usize,
    pub(crate) assets: BTreeMap<AssetKey, MediaAsset>,
    pub(crate) last_observed_at: Option<i64>,
}

impl Index {
    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn items(&self) -> &BTreeMap<String, ItemEntry> {
        &self.items
    }

    pub fn assets(&self) -> &BTreeMap<AssetKey, MediaAsset> {
        &self.assets
    }

    pub fn observation_count(&self) -> usize {
        self.observation_count
    }

    pub(crate) fn session(&self, id: &str) -> Option<&Session> {
        self.sessions.iter().find(|s| s.session_id == id)
    }

    pub(crate) fn apply_session(&mut self, session: Session) {
        self.sessions.push(session);
    }

    pub(crate) fn has_observation(&self, key: &ObservationKey) -> bool {
        self.observation_keys.contains(key)
    }

    /// Folds one observation in. Returns whether the item was previously unseen.
    /// Duplicate keys are ignored.
    pub(crate) fn apply_observation(&mut self, obs: Observation) -> bool {
        let key = obs.key();
        if !self.observation_keys.insert(key) {
            return false;
        }
        self.observation_count += 1;
        self.last_observed_at = Some(
            self.last_observed_at
                .map_or(obs.observed_at, |t| t.max(obs.observed_at)),
        );
        let obs_ref = ObservationRef {
            session_id: obs.session_id.clone(),
            envelope_id: obs.envelope_id.clone(),
            observed_at: obs.observed_at,
        };
        match self.items.get_mut(&obs.item_id) {
            Some(entry) => {
                entry.first_seen_at = entry.first_seen_at.min(obs.observed_at);
                entry.history.push(obs_ref);
                if obs.observed_at >= entry.canonical.observed_at {
                    entry.canonical = obs;
                }
                false
            }
            None => {
                self.items.insert(
                    obs.item_id.clone(),
                    ItemEntry {
                        first_seen_at: obs.observed_at,
                        canonical: obs,
                        history: vec![obs_ref],
                    },
                );
                true
            }
        }
    }

    pub(crate) fn apply_media_event(&mut self, event: MediaEvent) {
        match event {
            MediaEvent::Queued {
                item_id,
                url,
                ordinal,
                role,
            } => {
                let key = AssetKey {
                    item_id: item_id.clone(),
                    url: url.clone(),
                };
                self.assets.entry(key).or_insert(MediaAsset {
                    item_id,
                    url,
                    ordinal,
                    role,
                    local_path: None,
                    content_hash: None,
                    bytes: None,
                    fetched_at: None,
                    status: AssetStatus::Pending,
                });
            }
            MediaEvent::Fetched {
                item_id,
                url,
                local_path,
                content_hash,
                bytes,
                fetched_at,
                attempts: _,
            } => {
                if let Some(asset) = self.assets.get_mut(&AssetKey { item_id, url }) {
                    asset.local_path = Some(local_path);
                    asset.content_hash = Some(content_hash);
                    asset.bytes = Some(bytes);
                    asset.fetched_at = Some(fetched_at);
                    asset.status = AssetStatus::Fetched;
                }
            }
            MediaEvent::Failed {
                item_id,
                url,
                attempts,
                last_error,
            } => {
                if let Some(asset) = self.assets.get_mut(&AssetKey { item_id, url }) {
                    asset.status = AssetStatus::Failed {
                        attempts,
                        last_error,
                    };
                }
            }
        }
    }

    /// Drops media records whose item is not in the observation log (possible
    /// after the items log lost its tail).
    pub(crate) fn prune_orphan_assets(&mut self) {
        let items = &self.items;
        self.assets.retain(|k, _| items.contains_key(&k.item_id));
    }
}
