#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Output;
use std::sync::Arc;

use tidal::server::{self, AppState};
use tidal_core::{Archive, PatternTable};

pub const TOKEN: &str = "test-token-5f2c9a";
pub const KEY: &str = "fixture-pseudonym-key-0001";

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub struct Daemon {
    pub base: String,
    pub archive: Arc<Archive>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
}

impl Drop for Daemon {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Starts the service on an ephemeral loopback port.
pub async fn start_daemon(root: &Path, pseudonym_key: Option<&str>) -> Daemon {
    let archive = Arc::new(Archive::init(root).unwrap());
    let state = AppState {
        archive: archive.clone(),
        table: Arc::new(PatternTable::default()),
        token: TOKEN.into(),
        pseudonym_key: pseudonym_key.map(|k| k.as_bytes().into()),
    };
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = tokio::sync::oneshot::channel();
    tokio::spawn(server::serve(listener, state, async {
        let _ = rx.await;
    }));
    Daemon {
        base,
        archive,
        shutdown: Some(tx),
    }
}

/// Runs the built binary with a clean environment for its own variables.
pub fn tidal(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_tidal"))
        .args(args)
        .env_remove("TIDAL_ARCHIVE")
        .env_remove("TIDAL_CONFIG")
        .env_remove("TIDAL_TOKEN")
        .env_remove("TIDAL_PSEUDONYM_KEY")
        .env_remove("TIDAL_LOG")
        .output()
        .unwrap()
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let last = text.lines().last().unwrap_or_default();
    serde_json::from_str(last).unwrap_or_else(|e| panic!("{e}: {text}"))
}

pub fn log_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    ["sessions.ndjson", "items.ndjson", "media.ndjson"]
        .into_iter()
        .map(|n| (n.to_string(), std::fs::read(root.join(n)).unwrap()))
        .collect()
}
