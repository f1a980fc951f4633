use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One intercepted HTTP response, as delivered by the capture client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub envelope_id: String,
    pub source_url: String,
    pub method: String,
    pub status: u16,
    pub captured_at: i64,
    #[serde(default)]
    pub session_id: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvelopeError {
    #[error("malformed envelope document: {0}")]
    Malformed(String),
    #[error("invalid envelope_id {0:?}: use 1-128 characters from [A-Za-z0-9._-], not starting with '.'")]
    InvalidId(String),
    #[error("source_url is not an absolute URL: {0}")]
    InvalidUrl(String),
    #[error("captured_at must be positive, got {0}")]
    InvalidTimestamp(i64),
    #[error("invalid session_id {0:?}")]
    InvalidSession(String),
}

/// Identifiers double as file names inside the archive.
pub(crate) fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

impl Envelope {
    /// Decodes one NDJSON line (or any JSON document) and validates it.
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        let env: Envelope =
            serde_json::from_slice(bytes).map_err(|e| EnvelopeError::Malformed(e.to_string()))?;
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<(), EnvelopeError> {
        if !is_safe_id(&self.envelope_id) {
            return Err(EnvelopeError::InvalidId(self.envelope_id.clone()));
        }
        match url::Url::parse(&self.source_url) {
            Ok(u) if !u.cannot_be_a_base() => {}
            _ => return Err(EnvelopeError::InvalidUrl(self.source_url.clone())),
        }
        if self.captured_at <= 0 {
            return Err(EnvelopeError::InvalidTimestamp(self.captured_at));
        }
        if let Some(s) = &self.session_id {
            if !is_safe_id(s) {
                return Err(EnvelopeError::InvalidSession(s.clone()));
            }
        }
        Ok(())
    }

    /// Serializes as a single NDJSON line, without the trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> Envelope {
        Envelope {
            envelope_id: "env-1".into(),
            source_url: "https://i.example-api.test/api/v1/feed/reels_media/".into(),
            method: "GET".into(),
            status: 200,
            captured_at: 1,
            session_id: None,
            body: "{}".into(),
        }
    }

    #[test]
    fn validation() {
        assert!(env().validate().is_ok());
        let mut e = env();
        e.captured_at = 0;
        assert_eq!(e.validate(), Err(EnvelopeError::InvalidTimestamp(0)));
        let mut e = env();
        e.source_url = "/api/v1/feed".into();
        assert!(matches!(e.validate(), Err(EnvelopeError::InvalidUrl(_))));
        let mut e = env();
        e.envelope_id = "../etc/passwd".into();
        assert!(matches!(e.validate(), Err(EnvelopeError::InvalidId(_))));
    }

    #[test]
    fn null_session_decodes() {
        let line = br#"{"envelope_id":"a","source_url":"https://x.test/","method":"GET","status":200,"captured_at":5,"session_id":null,"body":""}"#;
        let e = Envelope::from_json_slice(line).unwrap();
        assert_eq!(e.session_id, None);
        assert!(Envelope::from_json_slice(b"{\"envelope_id\": 1}").is_err());
    }
}
