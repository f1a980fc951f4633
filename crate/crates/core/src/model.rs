//! Story records produced by the payload parser and stored in the archive.

use serde::{Deserialize, Serialize};

/// Lifetime of a story before it disappears from the live feed.
pub const STORY_LIFETIME_S: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Image,
    Video,
}

impl MediaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MediaKind::Image => "image",
            MediaKind::Video => "video",
        }
    }
}

/// Where an item was seen: in an author's current reel, or in a curated highlight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Live,
    Highlight,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Live => "live",
            Origin::Highlight => "highlight",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaRole {
    Primary,
    Poster,
}

/// One downloadable rendition of an item's media.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaRef {
    pub url: String,
    pub width: u32,
    pub height: u32,
    pub role: MediaRole,
    #[serde(default)]
    pub best: bool,
}

impl MediaRef {
    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollOption {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
}

/// An interactive overlay on a story.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sticker {
    Poll {
        question: String,
        options: Vec<PollOption>,
    },
    Question {
        prompt: String,
    },
    Mention {
        username: String,
    },
    Hashtag {
        tag: String,
    },
    Link {
        url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        title: Option<String>,
    },
    Location {
        name: String,
        location_id: String,
    },
    Slider {
        question: String,
        emoji: String,
    },
    Countdown {
        text: String,
        end_time: i64,
    },
    Music {
        artist: String,
        title: String,
    },
}

/// A sticker array the parser does not understand, kept verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSticker {
    /// Item-level key the node was found under, e.g. `story_quizs`.
    pub source_key: String,
    pub raw: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryItem {
    pub item_id: String,
    pub author_id: String,
    pub author_username: String,
    pub taken_at: i64,
    pub expiring_at: i64,
    pub media_kind: MediaKind,
    pub media: Vec<MediaRef>,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default)]
    pub stickers: Vec<Sticker>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw_stickers: Vec<RawSticker>,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highlight_id: Option<String>,
}

impl StoryItem {
    /// The media reference flagged `best`.
    pub fn best_media(&self) -> Option<&MediaRef> {
        self.media.iter().find(|m| m.best)
    }

    /// Largest poster frame, if the item has any.
    pub fn best_poster(&self) -> Option<&MediaRef> {
        let mut best: Option<&MediaRef> = None;
        for m in self.media.iter().filter(|m| m.role == MediaRole::Poster) {
            if best.is_none_or(|b| m.area() > b.area()) {
                best = Some(m);
            }
        }
        best
    }

    /// Checks the record-level invariants. Returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.expiring_at <= self.taken_at {
            return Err("expiring_at must be after taken_at".into());
        }
        if (self.origin == Origin::Highlight) != self.highlight_id.is_some() {
            return Err("highlight_id must be present exactly for highlight items".into());
        }
        if self.media.is_empty() {
            return Err("item has no media".into());
        }
        if self.media.iter().filter(|m| m.best).count() != 1 {
            return Err("exactly one media reference must be flagged best".into());
        }
        if self.media.iter().any(|m| m.width == 0 || m.height == 0) {
            return Err("media dimensions must be positive".into());
        }
        if self.media_kind == MediaKind::Video && (self.duration_s.is_nan() || self.duration_s <= 0.0) {
            return Err("video items need a positive duration".into());
        }
        if self.duration_s.is_nan() || self.duration_s < 0.0 {
            return Err("duration must be nonnegative".into());
        }
        for s in &self.stickers {
            match s {
                Sticker::Poll { options, .. } if options.len() < 2 => {
                    return Err("poll needs at least two options".into())
                }
                Sticker::Hashtag { tag } if tag.starts_with('#') => {
                    return Err("hashtag stored with leading '#'".into())
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// One account announced in a story tray payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrayEntry {
    pub author_id: String,
    pub author_username: String,
    pub latest_item_taken_at: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_count_hint: Option<u64>,
}
