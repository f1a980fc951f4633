//! HAR 1.2 import: turns browser network exports into envelopes.

use base64::Engine;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::Envelope;

#[derive(Debug, Error)]
pub enum HarError {
    #[error("not a HAR document: {0}")]
    NotHar(String),
}

#[derive(Debug, Deserialize)]
struct Har {
    log: HarLog,
}

#[derive(Debug, Deserialize)]
struct HarLog {
    entries: Vec<HarEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct HarEntry {
    started_date_time: String,
    request: HarRequest,
    response: HarResponse,
}

#[derive(Debug, Deserialize)]
struct HarRequest {
    method: String,
    url: String,
}

#[derive(Debug, Deserialize)]
struct HarResponse {
    status: i64,
    #[serde(default)]
    content: Option<HarContent>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct HarContent {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    encoding: Option<String>,
}

/// Envelopes extracted from a HAR document.
#[derive(Debug, Default)]
pub struct HarCapture {
    pub envelopes: Vec<Envelope>,
    /// Entries without a text body (absent, empty or binary).
    pub skipped: usize,
    /// Entries with a body whose metadata could not be used, by entry index.
    pub invalid: Vec<(usize, String)>,
}

pub fn parse_har(bytes: &[u8]) -> Result<HarCapture, HarError> {
    let har: Har = serde_json::from_slice(bytes).map_err(|e| HarError::NotHar(e.to_string()))?;
    let mut capture = HarCapture::default();
    for (i, entry) in har.log.entries.into_iter().enumerate() {
        let Some(body) = entry.response.content.and_then(text_body) else {
            capture.skipped += 1;
            continue;
        };
        let captured_at = match chrono::DateTime::parse_from_rfc3339(&entry.started_date_time) {
            Ok(t) => t.timestamp(),
            Err(e) => {
                capture
                    .invalid
                    .push((i, format!("bad startedDateTime {:?}: {e}", entry.started_date_time)));
                continue;
            }
        };
        let Ok(status) = u16::try_from(entry.response.status) else {
            capture
                .invalid
                .push((i, format!("bad status {}", entry.response.status)));
            continue;
        };
        let mut h = Sha256::new();
        for part in [
            entry.started_date_time.as_str(),
            entry.request.method.as_str(),
            entry.request.url.as_str(),
            body.as_str(),
        ] {
            h.update(part.as_bytes());
            h.update([0]);
        }
        let digest = hex::encode(h.finalize());
        let env = Envelope {
            envelope_id: format!("har-{}", &digest[..24]),
            source_url: entry.request.url,
            method: entry.request.method,
            status,
            captured_at,
            session_id: None,
            body,
        };
        match env.validate() {
            Ok(()) => capture.envelopes.push(env),
            Err(e) => capture.invalid.push((i, e.to_string())),
        }
    }
    Ok(capture)
}

fn text_body(content: HarContent) -> Option<String> {
    let text = content.text.filter(|t| !t.is_empty())?;
    match content.encoding.as_deref() {
        Some("base64") => {
            let raw = base64::engine::general_purpose::STANDARD.decode(text).ok()?;
            String::from_utf8(raw).ok().filter(|t| !t.is_empty())
        }
        _ => Some(text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn har(entries: &str) -> Vec<u8> {
        format!(r#"{{"log": {{"version": "1.2", "entries": [{entries}]}}}}"#).into_bytes()
    }

    fn entry(status: i64, content: &str) -> String {
        format!(
            r#"{{"startedDateTime": "2024-06-01T07:46:40.000Z",
                "request": {{"method": "GET", "url": "https://i.example-api.test/api/v1/feed/reels_tray/"}},
                "response": {{"status": {status}, "content": {content}}}}}"#
        )
    }

    #[test]
    fn empty_har() {
        let c = parse_har(&har("")).unwrap();
        assert!(c.envelopes.is_empty());
        assert_eq!(c.skipped, 0);
    }

    #[test]
    fn no_content_entry_is_skipped() {
        let c = parse_har(&har(&entry(204, r#"{"size": 0, "mimeType": "x-unknown"}"#))).unwrap();
        assert_eq!(c.skipped, 1);
        assert!(c.envelopes.is_empty());
    }

    #[test]
    fn text_and_base64_bodies() {
        let b64 = base64::engine::general_purpose::STANDARD.encode(r#"{"tray": []}"#);
        let entries = [
            entry(200, r#"{"mimeType": "application/json", "text": "{\"tray\": []}"}"#),
            entry(200, &format!(r#"{{"text": "{b64}", "encoding": "base64"}}"#)),
            // binary payload
            entry(200, r#"{"text": "/9j/4AAQ", "encoding": "base64"}"#),
        ]
        .join(",");
        let c = parse_har(&har(&entries)).unwrap();
        assert_eq!(c.envelopes.len(), 2);
        assert_eq!(c.skipped, 1);
        assert_eq!(c.envelopes[0].captured_at, 1_717_228_000);
        assert_eq!(c.envelopes[0].body, c.envelopes[1].body);
        assert_eq!(c.envelopes[0].envelope_id, c.envelopes[1].envelope_id);
    }

    #[test]
    fn not_har() {
        assert!(parse_har(b"{\"entries\": []}").is_err());
        assert!(parse_har(b"\x00\x01").is_err());
    }
}
