use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use tidal_core::export::{export_csv, ExportConfig};
use tidal_core::ingest::{ingest_har, ingest_ndjson};
use tidal_core::media::{fetch_pending, verify_media, FetchOptions};
use tidal_core::schedule::{coverage_report, plan_sessions};
use tidal_core::Archive;

use crate::config::{ConfigError, ServiceConfig, PSEUDONYM_KEY_ENV, TOKEN_ENV};
use crate::server::{self, AppState};

/// Local archiver for ephemeral stories.
#[derive(Debug, Parser)]
#[command(name = "tidal", version)]
pub struct Cli {
    /// Archive directory, overriding archive_root from the config file.
    #[arg(long, global = true, env = "TIDAL_ARCHIVE", value_name = "PATH")]
    pub archive: Option<PathBuf>,

    /// TOML config file.
    #[arg(long, global = true, env = "TIDAL_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the loopback ingestion service.
    Serve {
        /// host:port, overriding bind_address from the config file.
        #[arg(long)]
        bind: Option<String>,
        /// Permit binding to addresses other than loopback.
        #[arg(long)]
        allow_non_loopback: bool,
    },
    /// Import an NDJSON envelope stream (.ndjson, .jsonl) or a HAR file (.har).
    Ingest { path: PathBuf },
    /// Manage capture sessions.
    Session {
        #[command(subcommand)]
        action: SessionCommand,
    },
    /// Download pending media.
    FetchMedia(FetchArgs),
    /// Write the CSV export.
    Export {
        /// Output file, or - for stdout.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Replace usernames with keyed tokens.
        #[arg(long)]
        pseudonymize: bool,
    },
    /// Print archive counters.
    Stats,
    /// Analyse a fixed-interval capture schedule.
    Plan(PlanArgs),
    /// Check downloaded media against recorded sizes and hashes.
    Verify,
}

#[derive(Debug, Subcommand)]
pub enum SessionCommand {
    /// Start a new session.
    New {
        #[arg(long)]
        label: String,
        /// Unix seconds; defaults to now.
        #[arg(long)]
        started_at: Option<i64>,
    },
    /// List sessions.
    List,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    /// Per-request timeout.
    #[arg(long, default_value = "30s", value_parser = humantime::parse_duration)]
    pub timeout: Duration,
    /// Also retry assets that failed before.
    #[arg(long)]
    pub retry_failed: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Time between sessions, e.g. 12h.
    #[arg(long, value_parser = humantime::parse_duration)]
    pub interval: Duration,
    /// Story lifetime.
    #[arg(long, default_value = "24h", value_parser = humantime::parse_duration)]
    pub lifetime: Duration,
    /// Span covered by the plan.
    #[arg(long, default_value = "7d", value_parser = humantime::parse_duration)]
    pub horizon: Duration,
    /// First session, as Unix seconds or RFC 3339.
    #[arg(long, default_value = "0", value_parser = parse_instant)]
    pub anchor: i64,
    /// Print only the JSON report.
    #[arg(long)]
    pub json: bool,
}

fn parse_instant(s: &str) -> Result<i64, String> {
    if let Ok(t) = s.parse::<i64>() {
        return Ok(t);
    }
    chrono::DateTime::parse_from_rfc3339(s)
        .map(|d| d.timestamp())
        .map_err(|e| format!("expected Unix seconds or RFC 3339: {e}"))
}

/// A command failure, reported as one JSON line.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(kind: &'static str, message: impl ToString) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }

    pub fn to_json_line(&self) -> String {
        json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new("config", e)
    }
}

fn fail<E: ToString>(kind: &'static str) -> impl Fn(E) -> Failure {
    move |e| Failure::new(kind, e)
}

pub enum Output {
    Json(Value),
    Text(String),
    None,
}

fn load_config(cli: &Cli) -> Result<ServiceConfig, Failure> {
    let base = match &cli.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    Ok(base.with_overrides(
        cli.archive.clone(),
        std::env::var(TOKEN_ENV).ok(),
        std::env::var(PSEUDONYM_KEY_ENV).ok(),
    )?)
}

fn open_archive(config: &ServiceConfig) -> Result<Archive, Failure> {
    Archive::init(config.archive_root()?).map_err(fail("archive"))
}

pub async fn run(cli: Cli) -> Result<Output, Failure> {
    if let Command::Plan(args) = &cli.command {
        return plan(args);
    }
    let config = load_config(&cli)?;
    match cli.command {
        Command::Serve {
            bind,
            allow_non_loopback,
        } => serve(config, bind, allow_non_loopback).await,
        Command::Ingest { path } => ingest(&config, &path),
        Command::Session { action } => {
            let archive = open_archive(&config)?;
            match action {
                SessionCommand::New { label, started_at } => {
                    if label.trim().is_empty() {
                        return Err(Failure::new("usage", "label must not be empty"));
                    }
                    let at = started_at.unwrap_or_else(|| chrono::Utc::now().timestamp());
                    let s = archive.begin_session(label.trim(), at).map_err(fail("archive"))?;
                    Ok(Output::Json(json!(s)))
                }
                SessionCommand::List => Ok(Output::Json(json!(archive.sessions()))),
            }
        }
        Command::FetchMedia(args) => fetch(&config, args).await,
        Command::Export { out, pseudonymize } => export(&config, &out, pseudonymize),
        Command::Stats => Ok(Output::Json(json!(open_archive(&config)?.stats()))),
        Command::Verify => {
            let archive = open_archive(&config)?;
            let found = verify_media(&archive);
            if found.is_empty() {
                Ok(Output::Json(json!({ "discrepancies": [] })))
            } else {
                println!("{}", json!({ "discrepancies": found }));
                Err(Failure::new(
                    "verify_failed",
                    format!("{} media file(s) missing or damaged", found.len()),
                ))
            }
        }
        Command::Plan(_) => unreachable!(),
    }
}

async fn serve(
    mut config: ServiceConfig,
    bind: Option<String>,
    allow_non_loopback: bool,
) -> Result<Output, Failure> {
    if let Some(b) = bind {
        config.bind_address = b;
    }
    let addr = config.bind_addr(allow_non_loopback)?;
    let token = config.auth_token.clone().ok_or(ConfigError::NoToken)?;
    let state = AppState {
        archive: Arc::new(open_archive(&config)?),
        table: Arc::new(config.pattern_table()?),
        token: token.into(),
        pseudonym_key: config.pseudonym_key.clone().map(Into::into),
    };
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(fail("bind"))?;
    let local = listener.local_addr().map_err(fail("bind"))?;
    tracing::info!(address = %local, archive = %state.archive.root().display(), "listening");
    // announces the port when binding to :0
    println!("{}", json!({ "listening": local.to_string() }));
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    server::serve(listener, state, shutdown).await.map_err(fail("serve"))?;
    Ok(Output::None)
}

fn ingest(config: &ServiceConfig, path: &Path) -> Result<Output, Failure> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let table = config.pattern_table()?;
    let archive = open_archive(config)?;
    let summary = match ext.as_deref() {
        Some("har") => ingest_har(path, &table, &archive),
        Some("ndjson" | "jsonl") => ingest_ndjson(path, &table, &archive),
        _ => {
            return Err(Failure::new(
                "usage",
                format!("{}: expected a .ndjson, .jsonl or .har file", path.display()),
            ))
        }
    }
    .map_err(fail("ingest"))?;
    Ok(Output::Json(json!(summary)))
}

async fn fetch(config: &ServiceConfig, args: FetchArgs) -> Result<Output, Failure> {
    let archive = open_archive(config)?;
    let opts = FetchOptions {
        concurrency: args.concurrency,
        max_retries: args.max_retries,
        timeout: args.timeout,
        retry_failed: args.retry_failed,
        ..FetchOptions::default()
    };
    let report = fetch_pending(&archive, &opts).await.map_err(fail("media"))?;
    if report.failed > 0 {
        println!("{}", json!(report));
        return Err(Failure::new(
            "fetch_incomplete",
            format!("{} of {} media download(s) failed", report.failed, report.considered),
        ));
    }
    Ok(Output::Json(json!(report)))
}

fn export(config: &ServiceConfig, out: &Path, pseudonymize: bool) -> Result<Output, Failure> {
    let archive = open_archive(config)?;
    let cfg = ExportConfig {
        pseudonymize,
        pseudonym_key: config.pseudonym_key.clone(),
    };
    if out == Path::new("-") {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        export_csv(&archive, &cfg, &mut lock).map_err(fail("export"))?;
        lock.flush().map_err(fail("io"))?;
        return Ok(Output::None);
    }
    let tmp = out.with_file_name(format!(
        ".{}.{}.tmp",
        out.file_name().and_then(|n| n.to_str()).unwrap_or("export"),
        std::process::id()
    ));
    let write = || -> Result<usize, Failure> {
        let file = std::fs::File::create(&tmp).map_err(fail("io"))?;
        let mut buf = std::io::BufWriter::new(file);
        let rows = export_csv(&archive, &cfg, &mut buf).map_err(fail("export"))?;
        let file = buf.into_inner().map_err(fail("io"))?;
        file.sync_all().map_err(fail("io"))?;
        std::fs::rename(&tmp, out).map_err(fail("io"))?;
        Ok(rows)
    };
    let rows = write().inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(Output::Json(json!({ "rows": rows, "out": out })))
}

/// Sessions shown in the human-readable table before eliding.
const PLAN_TABLE_ROWS: usize = 24;

fn secs(d: Duration) -> Result<i64, Failure> {
    if d.subsec_nanos() != 0 {
        return Err(Failure::new("usage", "durations must be whole seconds"));
    }
    i64::try_from(d.as_secs()).map_err(fail("usage"))
}

fn plan(args: &PlanArgs) -> Result<Output, Failure> {
    let (interval, lifetime, horizon) = (secs(args.interval)?, secs(args.lifetime)?, secs(args.horizon)?);
    let plan = plan_sessions(args.anchor, interval, horizon).map_err(fail("plan"))?;
    let report = coverage_report(&plan, lifetime).map_err(fail("plan"))?;
    let doc = json!({
        "anchor": plan.anchor,
        "interval_s": plan.interval_s,
        "horizon_s": plan.horizon_s,
        "session_count": plan.sessions.len(),
        "coverage": report,
    });
    if args.json {
        return Ok(Output::Json(doc));
    }

    let iso = |t: i64| {
        chrono::DateTime::from_timestamp(t, 0)
            .map(|d| d.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
            .unwrap_or_else(|| t.to_string())
    };
    let human = |s: i64| humantime::format_duration(Duration::from_secs(s.unsigned_abs())).to_string();
    let mut text = String::new();
    let _ = writeln!(text, "{:>8}  {:<22}", "session", "time (UTC)");
    for (i, t) in plan.sessions.iter().take(PLAN_TABLE_ROWS).enumerate() {
        let _ = writeln!(text, "{:>8}  {:<22}", i + 1, iso(*t));
    }
    if plan.sessions.len() > PLAN_TABLE_ROWS {
        let _ = writeln!(text, "{:>8}  ({} more)", "...", plan.sessions.len() - PLAN_TABLE_ROWS);
    }
    let _ = writeln!(text);
    let _ = writeln!(text, "interval            {}", human(interval));
    let _ = writeln!(text, "lifetime            {}", human(lifetime));
    let _ = writeln!(text, "min observations    {}", report.min_observations);
    let _ = writeln!(text, "max observations    {}", report.max_observations);
    let _ = writeln!(text, "expected            {:.3}", report.expected_observations);
    let sign = if report.margin_s < 0 { "-" } else { "" };
    let _ = writeln!(text, "margin              {sign}{}", human(report.margin_s));
    let _ = writeln!(text, "single miss safe    {}", report.single_miss_safe);
    let _ = writeln!(text, "semantics           {}", report.semantics);
    let _ = writeln!(text);
    let _ = write!(text, "{doc}");
    Ok(Output::Text(text))
}
