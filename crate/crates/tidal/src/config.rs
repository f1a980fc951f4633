use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use tidal_core::export::MIN_KEY_LEN;
use tidal_core::PatternTable;

pub const DEFAULT_BIND: &str = "127.0.0.1:8089";
pub const TOKEN_ENV: &str = "TIDAL_TOKEN";
pub const PSEUDONYM_KEY_ENV: &str = "TIDAL_PSEUDONYM_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {err}", path = .0.display(), err = .1)]
    Read(PathBuf, std::io::Error),
    #[error("invalid config {path}: {err}", path = .0.display(), err = .1)]
    Syntax(PathBuf, String),
    #[error("no archive: pass --archive or set archive_root in the config file")]
    NoArchive,
    #[error("no auth token: set {TOKEN_ENV} or auth_token in the config file")]
    NoToken,
    #[error("cannot resolve bind address {0:?}: {1}")]
    BadBind(String, String),
    #[error("refusing to bind non-loopback address {0} without --allow-non-loopback")]
    NotLoopback(SocketAddr),
    #[error("pseudonym_key must be at least {MIN_KEY_LEN} bytes, got {0}")]
    KeyTooShort(usize),
    #[error("cannot load pattern table {path}: {err}", path = .0.display(), err = .1)]
    Patterns(PathBuf, String),
}

/// On-disk configuration. Relative paths are resolved against the file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub bind_address: Option<String>,
    pub auth_token: Option<String>,
    pub archive_root: Option<PathBuf>,
    pub pattern_table_path: Option<PathBuf>,
    pub pseudonym_key: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind_address: String,
    pub auth_token: Option<String>,
    pub archive_root: Option<PathBuf>,
    pub pattern_table_path: Option<PathBuf>,
    pub pseudonym_key: Option<Vec<u8>>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind_address: DEFAULT_BIND.to_string(),
            auth_token: None,
            archive_root: None,
            pattern_table_path: None,
            pseudonym_key: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(src: &str, base: &Path) -> Result<Self, String> {
        let file: FileConfig = toml::from_str(src).map_err(|e| e.message().to_string())?;
        let resolve = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        Ok(Self {
            bind_address: file.bind_address.unwrap_or_else(|| DEFAULT_BIND.to_string()),
            auth_token: file.auth_token.filter(|t| !t.is_empty()),
            archive_root: file.archive_root.map(resolve),
            pattern_table_path: file.pattern_table_path.map(resolve),
            pseudonym_key: file.pseudonym_key.map(String::into_bytes),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.into(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&src, base).map_err(|e| ConfigError::Syntax(path.into(), e))
    }

    /// Applies environment and command-line overrides, then checks the key.
    pub fn with_overrides(
        mut self,
        archive: Option<PathBuf>,
        token: Option<String>,
        pseudonym_key: Option<String>,
    ) -> Result<Self, ConfigError> {
        if archive.is_some() {
            self.archive_root = archive;
        }
        if let Some(t) = token.filter(|t| !t.is_empty()) {
            self.auth_token = Some(t);
        }
        if let Some(k) = pseudonym_key.filter(|k| !k.is_empty()) {
            self.pseudonym_key = Some(k.into_bytes());
        }
        if let Some(k) = &self.pseudonym_key {
            if k.len() < MIN_KEY_LEN {
                return Err(ConfigError::KeyTooShort(k.len()));
            }
        }
        Ok(self)
    }

    pub fn archive_root(&self) -> Result<&Path, ConfigError> {
        self.archive_root.as_deref().ok_or(ConfigError::NoArchive)
    }

    pub fn pattern_table(&self) -> Result<PatternTable, ConfigError> {
        match &self.pattern_table_path {
            Some(p) => PatternTable::load(p).map_err(|e| ConfigError::Patterns(p.clone(), e.to_string())),
            None => Ok(PatternTable::default()),
        }
    }

    /// Resolves the bind address, rejecting anything off loopback unless allowed.
    pub fn bind_addr(&self, allow_non_loopback: bool) -> Result<SocketAddr, ConfigError> {
        let bad = |e: String| ConfigError::BadBind(self.bind_address.clone(), e);
        let addrs: Vec<SocketAddr> = self
            .bind_address
            .to_socket_addrs()
            .map_err(|e| bad(e.to_string()))?
            .collect();
        let first = *addrs.first().ok_or_else(|| bad("no addresses".into()))?;
        if !allow_non_loopback {
            if let Some(a) = addrs.iter().find(|a| !a.ip().is_loopback()) {
                return Err(ConfigError::NotLoopback(*a));
            }
        }
        Ok(first)
    }
}
