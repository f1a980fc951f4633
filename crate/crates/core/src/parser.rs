//! Parsers for story payload schema v1 (see `docs/payload-schema.md`).
//!
//! Three document kinds are understood: reel-media payloads (an account's
//! current stories), highlight payloads (curated expired stories) and tray
//! payloads (which accounts currently have stories). Parsing is pure: the same
//! bytes always yield the same records.
//!
//! Errors carry a JSONPath-like pointer to the first node that could not be
//! interpreted, e.g. `$.reels_media[0].items[2].taken_at`.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{
    MediaKind, MediaRef, MediaRole, Origin, PollOption, RawSticker, Sticker, StoryItem, TrayEntry,
    STORY_LIFETIME_S,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {message}")]
pub struct ParseError {
    pub path: String,
    pub message: String,
}

impl ParseError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no media candidates to choose from")]
pub struct EmptyCandidates;

/// Item-level sticker arrays, in the order they are extracted.
const STICKER_KEYS: [&str; 9] = [
    "story_polls",
    "story_questions",
    "reel_mentions",
    "story_hashtags",
    "story_link_stickers",
    "story_locations",
    "story_sliders",
    "story_countdowns",
    "story_music_stickers",
];

/// Whether an item-level key holds sticker nodes (known or not).
pub fn is_sticker_key(key: &str) -> bool {
    key == "reel_mentions" || key.starts_with("story_")
}

/// Parses a reel-media payload into live story items.
pub fn parse_reel_payload(body: &str) -> Result<Vec<StoryItem>, ParseError> {
    let doc = parse_document(body)?;
    let root = Node::root(&doc);
    let mut items = Vec::new();
    for reel in root.field("reels_media")?.array()? {
        let author = parse_author(&reel.field("user")?)?;
        for item in reel.field("items")?.array()? {
            items.push(parse_item(&item, &author, ItemContext::Live)?);
        }
    }
    Ok(items)
}

/// Parses a highlight payload. Items keep their original lifecycle: they
/// expire one lifetime after posting, even though the highlight outlives that.
pub fn parse_highlight_payload(body: &str) -> Result<Vec<StoryItem>, ParseError> {
    let doc = parse_document(body)?;
    let root = Node::root(&doc);
    let mut items = Vec::new();
    for highlight in root.field("highlights")?.array()? {
        let highlight_id = highlight.field("id")?.id()?;
        let author = parse_author(&highlight.field("user")?)?;
        for item in highlight.field("items")?.array()? {
            items.push(parse_item(
                &item,
                &author,
                ItemContext::Highlight(&highlight_id),
            )?);
        }
    }
    Ok(items)
}

/// Parses a story tray payload. Tray entries are telemetry only.
pub fn parse_tray_payload(body: &str) -> Result<Vec<TrayEntry>, ParseError> {
    let doc = parse_document(body)?;
    let root = Node::root(&doc);
    let mut entries = Vec::new();
    for entry in root.field("tray")?.array()? {
        let author = parse_author(&entry.field("user")?)?;
        let latest_item_taken_at = entry.field("latest_reel_media")?.int()?;
        let item_count_hint = match entry.opt_field("media_count") {
            Some(n) => Some(n.uint()?),
            None => None,
        };
        entries.push(TrayEntry {
            author_id: author.id,
            author_username: author.username,
            latest_item_taken_at,
            item_count_hint,
        });
    }
    Ok(entries)
}

/// Picks the candidate with the largest pixel area; the first one wins ties.
/// The returned reference is flagged `best`.
pub fn select_best_media(candidates: &[MediaRef]) -> Result<MediaRef, EmptyCandidates> {
    let idx = best_index(candidates).ok_or(EmptyCandidates)?;
    let mut best = candidates[idx].clone();
    best.best = true;
    Ok(best)
}

fn best_index(candidates: &[MediaRef]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if best.is_none_or(|b| c.area() > candidates[b].area()) {
            best = Some(i);
        }
    }
    best
}

fn parse_document(body: &str) -> Result<Value, ParseError> {
    let doc: Value = serde_json::from_str(body)
        .map_err(|e| ParseError::new("$", format!("not a JSON document: {e}")))?;
    if !doc.is_object() {
        return Err(ParseError::new("$", "expected an object"));
    }
    Ok(doc)
}

struct Author {
    id: String,
    username: String,
}

fn parse_author(user: &Node<'_>) -> Result<Author, ParseError> {
    let id = user.field("pk")?.id()?;
    let username = user.field("username")?.string()?;
    Ok(Author { id, username })
}

#[derive(Clone, Copy)]
enum ItemContext<'a> {
    Live,
    Highlight(&'a str),
}

fn parse_item(
    node: &Node<'_>,
    author: &Author,
    ctx: ItemContext<'_>,
) -> Result<StoryItem, ParseError> {
    let obj = node.object()?;
    let item_id = node.field("pk")?.id()?;
    let taken_node = node.field("taken_at")?;
    let taken_at = taken_node.int()?;
    if taken_at <= 0 {
        return Err(taken_node.error("timestamp must be positive"));
    }

    let (origin, highlight_id, expiring_at) = match ctx {
        ItemContext::Live => {
            let expiring_at = match node.opt_field("expiring_at") {
                Some(e) => {
                    let v = e.int()?;
                    if v <= taken_at {
                        return Err(e.error("expiring_at must be after taken_at"));
                    }
                    v
                }
                None => taken_at + STORY_LIFETIME_S,
            };
            (Origin::Live, None, expiring_at)
        }
        ItemContext::Highlight(id) => (
            Origin::Highlight,
            Some(id.to_string()),
            taken_at + STORY_LIFETIME_S,
        ),
    };

    let type_node = node.field("media_type")?;
    let (media_kind, media, duration_s) = match type_node.int()? {
        1 => {
            let primaries = image_candidates(node, MediaRole::Primary)?
                .ok_or_else(|| node.error("image item without image_versions2.candidates"))?;
            (MediaKind::Image, mark_best(primaries), 0.0)
        }
        2 => {
            let versions = node
                .opt_field("video_versions")
                .ok_or_else(|| node.error("video item without video_versions"))?;
            let primaries = media_list(&versions, MediaRole::Primary)?;
            if primaries.is_empty() {
                return Err(versions.error("video item without video_versions"));
            }
            let dur_node = node
                .opt_field("video_duration")
                .ok_or_else(|| node.error("video item without video_duration"))?;
            let duration = dur_node.float()?;
            if !duration.is_finite() || duration <= 0.0 {
                return Err(dur_node.error("video duration must be positive"));
            }
            let mut media = mark_best(primaries);
            if let Some(posters) = image_candidates(node, MediaRole::Poster)? {
                media.extend(posters);
            }
            (MediaKind::Video, media, duration)
        }
        other => return Err(type_node.error(format!("unsupported media_type {other}"))),
    };

    let caption = match node.opt_field("caption") {
        None => None,
        Some(c) => match c.value {
            Value::String(s) => Some(s.clone()),
            Value::Object(_) => c.opt_field("text").map(|t| t.string()).transpose()?,
            _ => return Err(c.error("expected caption object or string")),
        },
    }
    .filter(|c| !c.is_empty());

    let (stickers, raw_stickers) = parse_stickers(node, obj)?;

    Ok(StoryItem {
        item_id,
        author_id: author.id.clone(),
        author_username: author.username.clone(),
        taken_at,
        expiring_at,
        media_kind,
        media,
        duration_s,
        caption,
        stickers,
        raw_stickers,
        origin,
        highlight_id,
    })
}

fn image_candidates(node: &Node<'_>, role: MediaRole) -> Result<Option<Vec<MediaRef>>, ParseError> {
    let Some(versions) = node.opt_field("image_versions2") else {
        return Ok(None);
    };
    let Some(candidates) = versions.opt_field("candidates") else {
        return Ok(None);
    };
    let list = media_list(&candidates, role)?;
    Ok(if list.is_empty() { None } else { Some(list) })
}

fn media_list(node: &Node<'_>, role: MediaRole) -> Result<Vec<MediaRef>, ParseError> {
    node.array()?
        .iter()
        .map(|c| {
            let url_node = c.field("url")?;
            let url = url_node.string()?;
            match url::Url::parse(&url) {
                Ok(u) if !u.cannot_be_a_base() => {}
                _ => return Err(url_node.error("media url must be absolute")),
            }
            let width = c.field("width")?.dimension()?;
            let height = c.field("height")?.dimension()?;
            Ok(MediaRef {
                url,
                width,
                height,
                role,
                best: false,
            })
        })
        .collect()
}

fn mark_best(mut media: Vec<MediaRef>) -> Vec<MediaRef> {
    if let Some(i) = best_index(&media) {
        media[i].best = true;
    }
    media
}

fn parse_stickers(
    node: &Node<'_>,
    obj: &Map<String, Value>,
) -> Result<(Vec<Sticker>, Vec<RawSticker>), ParseError> {
    let mut stickers = Vec::new();
    for key in STICKER_KEYS {
        let Some(list) = node.opt_field(key) else {
            continue;
        };
        for s in list.array()? {
            stickers.push(parse_sticker(key, &s)?);
        }
    }

    let mut raw = Vec::new();
    let mut unknown: Vec<&String> = obj
        .keys()
        .filter(|k| is_sticker_key(k) && !STICKER_KEYS.contains(&k.as_str()))
        .collect();
    unknown.sort();
    for key in unknown {
        if let Value::Array(nodes) = &obj[key] {
            raw.extend(nodes.iter().map(|n| RawSticker {
                source_key: key.clone(),
                raw: n.clone(),
            }));
        }
    }
    Ok((stickers, raw))
}

fn parse_sticker(key: &str, node: &Node<'_>) -> Result<Sticker, ParseError> {
    Ok(match key {
        "story_polls" => {
            let poll = node.field("poll_sticker")?;
            let question = poll.field("question")?.string()?;
            let tallies = poll.field("tallies")?;
            let options = tallies
                .array()?
                .iter()
                .map(|t| {
                    Ok(PollOption {
                        text: t.field("text")?.string()?,
                        count: t.opt_field("count").map(|c| c.uint()).transpose()?,
                    })
                })
                .collect::<Result<Vec<_>, ParseError>>()?;
            if options.len() < 2 {
                return Err(tallies.error("poll needs at least two options"));
            }
            Sticker::Poll { question, options }
        }
        "story_questions" => Sticker::Question {
            prompt: node.field("question_sticker")?.field("question")?.string()?,
        },
        "reel_mentions" => Sticker::Mention {
            username: node.field("user")?.field("username")?.string()?,
        },
        "story_hashtags" => {
            let name = node.field("hashtag")?.field("name")?;
            let tag = name.string()?;
            let tag = tag.trim_start_matches('#');
            if tag.is_empty() {
                return Err(name.error("empty hashtag"));
            }
            Sticker::Hashtag {
                tag: tag.to_string(),
            }
        }
        "story_link_stickers" => {
            let link = node.field("story_link")?;
            Sticker::Link {
                url: link.field("url")?.string()?,
                title: link.opt_field("link_title").map(|t| t.string()).transpose()?,
            }
        }
        "story_locations" => {
            let loc = node.field("location")?;
            Sticker::Location {
                name: loc.field("name")?.string()?,
                location_id: loc.field("pk")?.id()?,
            }
        }
        "story_sliders" => {
            let slider = node.field("slider_sticker")?;
            Sticker::Slider {
                question: slider.field("question")?.string()?,
                emoji: slider.field("emoji")?.string()?,
            }
        }
        "story_countdowns" => {
            let cd = node.field("countdown_sticker")?;
            Sticker::Countdown {
                text: cd.field("text")?.string()?,
                end_time: cd.field("end_ts")?.int()?,
            }
        }
        "story_music_stickers" => {
            let music = node.field("music_asset_info")?;
            Sticker::Music {
                artist: music.field("display_artist")?.string()?,
                title: music.field("title")?.string()?,
            }
        }
        _ => unreachable!("not a known sticker key: {key}"),
    })
}

/// A JSON value together with its location in the document.
struct Node<'a> {
    value: &'a Value,
    path: String,
}

impl<'a> Node<'a> {
    fn root(value: &'a Value) -> Self {
        Self {
            value,
            path: "$".to_string(),
        }
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError::new(self.path.clone(), message)
    }

    fn object(&self) -> Result<&'a Map<String, Value>, ParseError> {
        self.value
            .as_object()
            .ok_or_else(|| self.error("expected an object"))
    }

    fn field(&self, name: &str) -> Result<Node<'a>, ParseError> {
        self.opt_field(name)
            .ok_or_else(|| ParseError::new(format!("{}.{name}", self.path), "missing field"))
    }

    /// Absent and `null` fields are both treated as missing.
    fn opt_field(&self, name: &str) -> Option<Node<'a>> {
        match self.value.get(name) {
            None | Some(Value::Null) => None,
            Some(v) => Some(Node {
                value: v,
                path: format!("{}.{name}", self.path),
            }),
        }
    }

    fn array(&self) -> Result<Vec<Node<'a>>, ParseError> {
        let arr = self
            .value
            .as_array()
            .ok_or_else(|| self.error("expected an array"))?;
        Ok(arr
            .iter()
            .enumerate()
            .map(|(i, v)| Node {
                value: v,
                path: format!("{}[{i}]", self.path),
            })
            .collect())
    }

    fn string(&self) -> Result<String, ParseError> {
        self.value
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| self.error("expected a string"))
    }

    /// Platform identifiers arrive as strings or as bare integers.
    fn id(&self) -> Result<String, ParseError> {
        let id = match self.value {
            Value::String(s) => s.clone(),
            Value::Number(n) if n.is_u64() || n.is_i64() => n.to_string(),
            _ => return Err(self.error("expected an identifier")),
        };
        if id.is_empty() {
            return Err(self.error("empty identifier"));
        }
        Ok(id)
    }

    fn int(&self) -> Result<i64, ParseError> {
        self.value
            .as_i64()
            .ok_or_else(|| self.error("expected an integer"))
    }

    fn uint(&self) -> Result<u64, ParseError> {
        self.value
            .as_u64()
            .ok_or_else(|| self.error("expected a nonnegative integer"))
    }

    fn float(&self) -> Result<f64, ParseError> {
        self.value
            .as_f64()
            .ok_or_else(|| self.error("expected a number"))
    }

    fn dimension(&self) -> Result<u32, ParseError> {
        match self.value.as_u64() {
            Some(v) if v > 0 && v <= u64::from(u32::MAX) => Ok(v as u32),
            _ => Err(self.error("expected a positive pixel dimension")),
        }
    }
}
