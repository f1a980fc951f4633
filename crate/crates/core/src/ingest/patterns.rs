//! URL pattern table deciding which intercepted responses carry story data.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The default table shipped in `config/patterns.toml`.
pub const DEFAULT_PATTERNS_TOML: &str = include_str!("../../../../config/patterns.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    StoryTray,
    ReelMedia,
    Highlight,
    Unrelated,
}

impl EndpointKind {
    const MATCHABLE: [EndpointKind; 3] = [
        EndpointKind::StoryTray,
        EndpointKind::ReelMedia,
        EndpointKind::Highlight,
    ];
}

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("pattern table is not valid TOML: {0}")]
    Syntax(String),
    #[error("pattern {index} is invalid: {message}")]
    BadPattern { index: usize, message: String },
    #[error("pattern table has no pattern for {0:?}")]
    MissingKind(EndpointKind),
    #[error("cannot read pattern table {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Deserialize)]
struct TableFile {
    #[serde(default)]
    pattern: Vec<PatternEntry>,
}

#[derive(Deserialize)]
struct PatternEntry {
    regex: String,
    kind: EndpointKind,
}

/// Ordered (pattern, kind) pairs; the first match wins.
#[derive(Debug, Clone)]
pub struct PatternTable {
    patterns: Vec<(Regex, EndpointKind)>,
}

impl PatternTable {
    /// Builds a table from `(regex, kind)` pairs. Every regex must be anchored
    /// with `^` and every story-bearing kind must be covered.
    pub fn new<S: AsRef<str>>(
        entries: impl IntoIterator<Item = (S, EndpointKind)>,
    ) -> Result<Self, PatternError> {
        let mut patterns = Vec::new();
        for (index, (src, kind)) in entries.into_iter().enumerate() {
            let src = src.as_ref();
            if !src.starts_with('^') {
                return Err(PatternError::BadPattern {
                    index,
                    message: "pattern must be anchored with '^'".into(),
                });
            }
            if kind == EndpointKind::Unrelated {
                return Err(PatternError::BadPattern {
                    index,
                    message: "unrelated is the fallback and cannot be matched explicitly".into(),
                });
            }
            let re = Regex::new(src).map_err(|e| PatternError::BadPattern {
                index,
                message: e.to_string(),
            })?;
            patterns.push((re, kind));
        }
        for kind in EndpointKind::MATCHABLE {
            if !patterns.iter().any(|(_, k)| *k == kind) {
                return Err(PatternError::MissingKind(kind));
            }
        }
        Ok(Self { patterns })
    }

    pub fn from_toml_str(src: &str) -> Result<Self, PatternError> {
        let file: TableFile = toml::from_str(src).map_err(|e| PatternError::Syntax(e.to_string()))?;
        Self::new(file.pattern.into_iter().map(|p| (p.regex, p.kind)))
    }

    pub fn load(path: &Path) -> Result<Self, PatternError> {
        let src = std::fs::read_to_string(path).map_err(|source| PatternError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&src)
    }

    pub fn classify(&self, url: &str) -> EndpointKind {
        self.patterns
            .iter()
            .find(|(re, _)| re.is_match(url))
            .map_or(EndpointKind::Unrelated, |(_, kind)| *kind)
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

impl Default for PatternTable {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_PATTERNS_TOML).expect("shipped pattern table is valid")
    }
}

/// Maps a URL to the kind of the first matching pattern.
pub fn classify_endpoint(url: &str, table: &PatternTable) -> EndpointKind {
    table.classify(url)
}
