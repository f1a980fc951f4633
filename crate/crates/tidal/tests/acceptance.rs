//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Expected fixture counts are frozen from `tools/count_fixtures.py`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use tidal::server::{self, AppState};
use tidal_core::export::{export_csv, ExportConfig, CSV_COLUMNS, NAME_COLUMNS};
use tidal_core::ingest::{ingest_envelope, ingest_har, ingest_ndjson, EndpointKind};
use tidal_core::media::{fetch_pending, verify_media, FetchOptions};
use tidal_core::parser::{parse_highlight_payload, parse_reel_payload, parse_tray_payload};
use tidal_core::schedule::{coverage_report, plan_sessions};
use tidal_core::{Archive, Envelope, ItemFilter, PatternTable, Sticker};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn fixture_text(name: &str) -> String {
    fs::read_to_string(fixture(name)).unwrap()
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap()
}

fn fixture_parse_exactness() -> Outcome {
    let start = Instant::now();
    let reels = parse_reel_payload(&fixture_text("fx_reels_3users.json")).map_err(|e| e.to_string())?;
    let count = |f: fn(&Sticker) -> bool| reels.iter().flat_map(|i| &i.stickers).filter(|s| f(s)).count();
    check!(reels.len() == 7, "reels items {} != 7", reels.len());
    check!(count(|s| matches!(s, Sticker::Poll { .. })) == 1, "poll count");
    check!(count(|s| matches!(s, Sticker::Mention { .. })) == 1, "mention count");
    check!(count(|s| matches!(s, Sticker::Hashtag { .. })) == 1, "hashtag count");
    let known: usize = reels.iter().map(|i| i.stickers.len()).sum();
    let unknown: usize = reels.iter().map(|i| i.raw_stickers.len()).sum();
    check!((known, unknown) == (9, 1), "stickers known/unknown {known}/{unknown} != 9/1");

    let video = parse_reel_payload(&fixture_text("fx_video_item.json")).map_err(|e| e.to_string())?;
    check!(video.len() == 1, "video items {}", video.len());
    let hl = parse_highlight_payload(&fixture_text("fx_highlight_tray.json")).map_err(|e| e.to_string())?;
    check!(hl.len() == 3, "highlight items {}", hl.len());
    let tray = parse_tray_payload(&fixture_text("fx_tray.json")).map_err(|e| e.to_string())?;
    check!(tray.len() == 5, "tray entries {}", tray.len());
    check!(tray.iter().filter(|t| t.item_count_hint.is_none()).count() == 1, "tray hints");

    let dir = tempdir();
    let archive = Archive::init(dir.path()).map_err(|e| e.to_string())?;
    let table = PatternTable::default();
    let s = ingest_ndjson(&fixture("fx_stream.ndjson"), &table, &archive).map_err(|e| e.to_string())?;
    check!(
        (s.envelopes, s.parsed, s.new, s.rejected) == (5, 11, 11, 0),
        "stream summary {s:?}"
    );
    check!(archive.stats().items == 11, "archived items {}", archive.stats().items);

    let har_dir = tempdir();
    let har_archive = Archive::init(har_dir.path()).map_err(|e| e.to_string())?;
    let h = ingest_har(&fixture("fx_reels_3users.har"), &table, &har_archive).map_err(|e| e.to_string())?;
    check!((h.parsed, h.new, h.skipped) == (7, 7, 1), "har summary {h:?}");

    let elapsed = start.elapsed();
    check!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("7 reel items, 11 stream items, {elapsed:.0?}"))
}

fn dedup_idempotence() -> Outcome {
    let dir = tempdir();
    let archive = Archive::init(dir.path()).map_err(|e| e.to_string())?;
    let table = PatternTable::default();
    let lines: Vec<Envelope> = fixture_text("fx_stream.ndjson")
        .lines()
        .map(|l| Envelope::from_json_slice(l.as_bytes()).unwrap())
        .collect();
    let mut first_new = 0;
    for env in &lines {
        first_new += ingest_envelope(env, &table, &archive).map_err(|e| e.to_string())?.items_new;
    }
    let items = archive.stats().items;
    let before = archive.index_snapshot();
    for env in &lines {
        let r = ingest_envelope(env, &table, &archive).map_err(|e| e.to_string())?;
        check!(r.items_new == 0, "{} reported {} new items on replay", r.envelope_id, r.items_new);
    }
    check!(archive.stats().items == items, "item count changed on replay");
    check!(archive.index_snapshot() == before, "index changed on replay");
    check!(first_new == 11 && items == 11, "first pass new={first_new} items={items}");
    Ok(format!("{items} items, second pass items_new=0 for all {} envelopes", lines.len()))
}

/// Counts sessions inside [p, p + lifetime) by scanning every session.
fn brute_count(sessions: &[i64], p: i64, lifetime: i64) -> usize {
    sessions.iter().filter(|&&t| p <= t && t < p + lifetime).count()
}

struct Brute {
    min: usize,
    max: usize,
    single_miss_safe: bool,
}

/// Window membership at 1 s granularity over one steady-state period.
fn brute_coverage(sessions: &[i64], interval: i64, lifetime: i64, p0: i64) -> Brute {
    let (mut min, mut max) = (usize::MAX, 0);
    for p in p0..p0 + interval {
        let c = brute_count(sessions, p, lifetime);
        min = min.min(c);
        max = max.max(c);
    }
    // drop each session that can observe this period and look for a gap
    let relevant: Vec<usize> = (0..sessions.len())
        .filter(|&k| sessions[k] >= p0 && sessions[k] < p0 + interval + lifetime)
        .collect();
    let single_miss_safe = relevant.iter().all(|&k| {
        let mut rest = sessions.to_vec();
        rest.remove(k);
        (p0..p0 + interval).all(|p| brute_count(&rest, p, lifetime) >= 1)
    });
    Brute {
        min,
        max,
        single_miss_safe,
    }
}

fn coverage_mathematics() -> Outcome {
    let start = Instant::now();
    let lifetime = 86_400;
    let regimes: [(i64, usize, usize, i64, bool); 3] = [
        (43_200, 2, 2, 43_200, true),
        (86_400, 1, 1, 0, false),
        (90_000, 0, 1, -3_600, false),
    ];
    let mut notes = Vec::new();
    for (interval, want_min, want_max, want_margin, want_safe) in regimes {
        let plan = plan_sessions(0, interval, 20 * interval).map_err(|e| e.to_string())?;
        let report = coverage_report(&plan, lifetime).map_err(|e| e.to_string())?;
        let b = brute_coverage(&plan.sessions, interval, lifetime, 5 * interval);
        check!(
            (b.min, b.max, b.single_miss_safe) == (want_min, want_max, want_safe),
            "interval {interval}: oracle gave min={} max={} safe={}",
            b.min,
            b.max,
            b.single_miss_safe
        );
        check!(
            report.min_observations as usize == b.min
                && report.max_observations as usize == b.max
                && report.single_miss_safe == b.single_miss_safe
                && report.margin_s == want_margin,
            "interval {interval}: report {report:?} disagrees with oracle"
        );
        notes.push(format!("{}h min={} max={}", interval / 3600, b.min, b.max));
    }
    let elapsed = start.elapsed();
    check!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("{}, {elapsed:.1?}", notes.join("; ")))
}

/// A reel payload in the fixture schema with `n` items per author.
fn synthetic_reels(first_item: u64, authors: u64, per_author: u64, media_base: &str) -> String {
    let mut reels = Vec::new();
    let mut id = first_item;
    for a in 0..authors {
        let pk = 7_000_000 + first_item / per_author.max(1) + a;
        let mut items = Vec::new();
        for k in 0..per_author {
            let taken = 1_717_200_000 + (id % 80_000) as i64;
            let mut item = json!({
                "pk": id.to_string(),
                "taken_at": taken,
                "expiring_at": taken + 86_400,
                "caption": {"text": format!("synthetic story {id}, \"quoted\"\nsecond line")},
                "story_hashtags": [{"hashtag": {"name": format!("#tag{}", id % 17)}}],
                "reel_mentions": [{"user": {"pk": "9", "username": format!("mentioned_{}", id % 13)}}],
            });
            if k % 3 == 2 {
                item["media_type"] = json!(2);
                item["video_duration"] = json!(6.5);
                item["video_versions"] = json!([
                    {"url": format!("{media_base}/{id}.mp4"), "width": 1080, "height": 1920}
                ]);
                item["image_versions2"] = json!({"candidates": [
                    {"url": format!("{media_base}/{id}p.jpg"), "width": 1080, "height": 1920}
                ]});
            } else {
                item["media_type"] = json!(1);
                item["image_versions2"] = json!({"candidates": [
                    {"url": format!("{media_base}/{id}s.jpg"), "width": 320, "height": 568},
                    {"url": format!("{media_base}/{id}.jpg"), "width": 1080, "height": 1920}
                ]});
                item["story_polls"] = json!([{"poll_sticker": {
                    "question": "Seen it?",
                    "tallies": [{"text": "Yes", "count": id % 50}, {"text": "No", "count": id % 7}]
                }}]);
            }
            items.push(item);
            id += 1;
        }
        reels.push(json!({
            "id": pk.to_string(),
            "user": {"pk": pk.to_string(), "username": format!("synthetic.author_{pk}")},
            "items": items,
        }));
    }
    json!({"reels_media": reels, "status": "ok"}).to_string()
}

fn envelope_line(id: &str, body: String, captured_at: i64) -> String {
    json!({
        "envelope_id": id,
        "source_url": "https://i.example-api.test/api/v1/feed/reels_media/?reel_ids=synthetic",
        "method": "GET",
        "status": 200,
        "captured_at": captured_at,
        "session_id": null,
        "body": body,
    })
    .to_string()
}

const CORPUS_ITEMS: u64 = 2208;

fn desk_scale_throughput() -> Outcome {
    let dir = tempdir();
    let stream = dir.path().join("synthetic.ndjson");
    let per_envelope = 24;
    let mut text = String::new();
    for e in 0..CORPUS_ITEMS / per_envelope {
        let body = synthetic_reels(10_000_000 + e * per_envelope, 4, per_envelope / 4, "https://cdn.example-media.test/syn");
        text.push_str(&envelope_line(&format!("syn-{e:04}"), body, 1_717_290_000 + e as i64));
        text.push('\n');
    }
    fs::write(&stream, text).unwrap();

    let archive = Archive::init(dir.path().join("archive")).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let s = ingest_ndjson(&stream, &PatternTable::default(), &archive).map_err(|e| e.to_string())?;
    let ingest = t0.elapsed();
    check!(s.new == CORPUS_ITEMS as usize && s.rejected == 0, "ingest summary {s:?}");

    let t1 = Instant::now();
    let mut out = Vec::with_capacity(4 << 20);
    let rows = export_csv(&archive, &ExportConfig::plain(), &mut out).map_err(|e| e.to_string())?;
    let export = t1.elapsed();
    check!(rows == CORPUS_ITEMS as usize, "exported {rows} rows");
    check!(ingest < Duration::from_secs(10), "ingest took {ingest:?}");
    check!(export < Duration::from_secs(2), "export took {export:?}");
    Ok(format!("{rows} items: ingest {ingest:.0?}, export {export:.0?}"))
}

#[derive(Clone, Default)]
struct FlakyServer {
    hits: Arc<Mutex<BTreeMap<String, usize>>>,
    total: Arc<AtomicUsize>,
}

async fn flaky(State(s): State<FlakyServer>, UrlPath(name): UrlPath<String>) -> Response {
    s.total.fetch_add(1, Ordering::Relaxed);
    let n = {
        let mut h = s.hits.lock().unwrap();
        let n = h.entry(name.clone()).or_default();
        *n += 1;
        *n
    };
    if n <= 2 {
        return StatusCode::INTERNAL_SERVER_ERROR.into_response();
    }
    let ct = if name.ends_with(".mp4") { "video/mp4" } else { "image/jpeg" };
    ([("content-type", ct)], format!("media:{name}:").repeat(200)).into_response()
}

async fn start_flaky() -> (SocketAddr, FlakyServer) {
    let state = FlakyServer::default();
    let app = Router::new()
        .route("/m/{name}", get(flaky))
        .with_state(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (addr, state)
}

fn media_integrity() -> Outcome {
    runtime().block_on(async {
        let (addr, server) = start_flaky().await;
        let dir = tempdir();
        let archive = Archive::init(dir.path()).map_err(|e| e.to_string())?;
        let body = synthetic_reels(20_000_000, 2, 3, &format!("http://{addr}/m"));
        let env = Envelope::from_json_slice(envelope_line("media-0001", body, 1_717_290_000).as_bytes())
            .map_err(|e| e.to_string())?;
        ingest_envelope(&env, &PatternTable::default(), &archive).map_err(|e| e.to_string())?;
        let pending = archive.stats().pending_media;
        check!(pending == 8, "expected 8 queued assets, got {pending}");

        let opts = FetchOptions {
            max_retries: 2,
            ..FetchOptions::default()
        };
        let report = fetch_pending(&archive, &opts).await.map_err(|e| e.to_string())?;
        check!(
            report.fetched == pending && report.failed == 0,
            "fetch report {report:?}"
        );
        check!(
            server.total.load(Ordering::Relaxed) == 3 * pending,
            "server saw {} requests",
            server.total.load(Ordering::Relaxed)
        );
        let clean = verify_media(&archive);
        check!(clean.is_empty(), "fresh archive has discrepancies: {clean:?}");

        let victim = archive
            .assets()
            .into_iter()
            .find_map(|a| a.local_path)
            .ok_or("no local files")?;
        let path = dir.path().join(&victim);
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] ^= 0x20;
        fs::write(&path, bytes).unwrap();
        let found = verify_media(&archive);
        check!(found.len() == 1, "corruption gave {} discrepancies", found.len());
        Ok(format!("{} assets after 2×500 each, 1 discrepancy after corrupting {victim}", report.fetched))
    })
}

fn usernames(archive: &Archive) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    for item in archive.list_items(&ItemFilter::default()) {
        names.insert(item.author_username.clone());
        for s in &item.stickers {
            if let Sticker::Mention { username } = s {
                names.insert(username.clone());
            }
        }
    }
    names
}

fn read_csv(bytes: &[u8]) -> Result<Vec<Vec<String>>, String> {
    let mut r = csv::ReaderBuilder::new().from_reader(bytes);
    let header: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    check!(header == CSV_COLUMNS, "header {header:?}");
    r.records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()).map_err(|e| e.to_string()))
        .collect()
}

fn export_properties() -> Outcome {
    let dir = tempdir();
    let archive = Archive::init(dir.path()).map_err(|e| e.to_string())?;
    let table = PatternTable::default();
    ingest_ndjson(&fixture("fx_stream.ndjson"), &table, &archive).map_err(|e| e.to_string())?;
    let body = synthetic_reels(30_000_000, 5, 6, "https://cdn.example-media.test/x");
    let env = Envelope::from_json_slice(envelope_line("export-0001", body, 1_717_300_000).as_bytes()).unwrap();
    ingest_envelope(&env, &table, &archive).map_err(|e| e.to_string())?;

    let key = b"acceptance-pseudonym-key".to_vec();
    let mut plain = Vec::new();
    let mut pseudo = Vec::new();
    export_csv(&archive, &ExportConfig::plain(), &mut plain).map_err(|e| e.to_string())?;
    export_csv(&archive, &ExportConfig::pseudonymized(key), &mut pseudo).map_err(|e| e.to_string())?;

    let plain_rows = read_csv(&plain)?;
    let ids: BTreeSet<String> = plain_rows.iter().map(|r| r[0].clone()).collect();
    let archived: BTreeSet<String> = archive
        .list_items(&ItemFilter::default())
        .into_iter()
        .map(|i| i.item_id)
        .collect();
    check!(ids == archived, "round trip lost or invented item ids");
    check!(ids.len() == plain_rows.len(), "duplicate rows");

    let text = String::from_utf8(pseudo.clone()).map_err(|e| e.to_string())?;
    let names = usernames(&archive);
    for n in &names {
        check!(!text.contains(n.as_str()), "raw username {n:?} in pseudonymized export");
    }
    let pseudo_rows = read_csv(&pseudo)?;
    check!(pseudo_rows.len() == plain_rows.len(), "row counts differ");
    for (a, b) in plain_rows.iter().zip(&pseudo_rows) {
        for (i, col) in CSV_COLUMNS.iter().enumerate() {
            if !NAME_COLUMNS.contains(col) {
                check!(a[i] == b[i], "column {col} differs for item {}", a[0]);
            }
        }
    }
    Ok(format!("{} rows, {} usernames hidden", plain_rows.len(), names.len()))
}

fn crash_safety() -> Outcome {
    let src = tempdir();
    {
        let archive = Archive::init(src.path()).map_err(|e| e.to_string())?;
        let table = PatternTable::default();
        for e in 0..10u64 {
            let body = synthetic_reels(40_000_000 + (e % 5) * 12, 3, 4, "https://cdn.example-media.test/c");
            let env = Envelope::from_json_slice(
                envelope_line(&format!("crash-{e}"), body, 1_717_300_000 + e as i64 * 3_600).as_bytes(),
            )
            .unwrap();
            ingest_envelope(&env, &table, &archive).map_err(|e| e.to_string())?;
        }
    }
    let log = fs::read(src.path().join("items.ndjson")).unwrap();
    let mut cuts: Vec<usize> = std::iter::once(0)
        .chain(log.iter().enumerate().filter(|(_, &b)| b == b'\n').map(|(i, _)| i + 1))
        .collect();
    let boundaries = cuts.len();
    check!(boundaries >= 100, "only {boundaries} record boundaries");
    let mut rng = StdRng::seed_from_u64(0x71de);
    cuts.extend((0..60).map(|_| rng.random_range(0..log.len())));

    for cut in &cuts {
        let cut = *cut;
        let dst = tempdir();
        for name in ["archive.meta", "sessions.ndjson", "media.ndjson"] {
            fs::copy(src.path().join(name), dst.path().join(name)).unwrap();
        }
        fs::write(dst.path().join("items.ndjson"), &log[..cut]).unwrap();

        // prefix oracle: complete lines, plus an unterminated tail that is a whole record
        let prefix: Vec<Value> = log[..cut]
            .split(|&b| b == b'\n')
            .filter(|l| !l.is_empty())
            .filter_map(|l| serde_json::from_slice(l).ok())
            .collect();
        let distinct: BTreeSet<&str> = prefix.iter().map(|o| o["item_id"].as_str().unwrap()).collect();

        let archive = Archive::init(dst.path()).map_err(|e| format!("cut {cut}: {e}"))?;
        let stats = archive.stats();
        check!(
            stats.observations == prefix.len() && stats.items == distinct.len(),
            "cut {cut}: {stats:?}, oracle {} observations {} items",
            prefix.len(),
            distinct.len()
        );
        for id in &distinct {
            archive.get_item(id).map_err(|e| format!("cut {cut}: {e}"))?;
        }
        drop(archive);
        let repaired = fs::read(dst.path().join("items.ndjson")).unwrap();
        check!(log.starts_with(&repaired), "cut {cut}: repaired log is not a prefix");
        check!(Archive::init(dst.path()).is_ok(), "cut {cut}: second reopen failed");
    }
    Ok(format!("{} truncation points ({boundaries} record boundaries)", cuts.len()))
}

fn no_extension_needed() -> Outcome {
    let dir = tempdir();
    let root = dir.path().join("cli");
    let run = |args: &[&str]| {
        std::process::Command::new(env!("CARGO_BIN_EXE_tidal"))
            .args(args)
            .env_remove("TIDAL_CONFIG")
            .env_remove("TIDAL_ARCHIVE")
            .output()
            .unwrap()
    };
    let src = fixture("fx_reels_3users.ndjson");
    let out = run(&["--archive", root.to_str().unwrap(), "ingest", src.to_str().unwrap()]);
    check!(out.status.success(), "cli ingest failed: {}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["--archive", root.to_str().unwrap(), "stats"]);
    let stats: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    check!(stats["items"] == 7, "cli stats {stats}");

    runtime().block_on(async {
        let archive = Arc::new(Archive::init(dir.path().join("http")).map_err(|e| e.to_string())?);
        let state = AppState {
            archive: archive.clone(),
            table: Arc::new(PatternTable::default()),
            token: "acceptance".into(),
            pseudonym_key: None,
        };
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(server::serve(listener, state, std::future::pending()));
        let client = reqwest::Client::new();
        let receipt: Value = client
            .post(format!("{base}/api/v1/envelopes"))
            .bearer_auth("acceptance")
            .body(fixture_text("fx_reels_3users.ndjson").trim_end().to_string())
            .send()
            .await
            .map_err(|e| e.to_string())?
            .json()
            .await
            .map_err(|e| e.to_string())?;
        check!(receipt["items_new"] == 7, "http receipt {receipt}");
        check!(receipt["kind"] == json!(EndpointKind::ReelMedia), "kind {}", receipt["kind"]);
        let stats: Value = client
            .get(format!("{base}/api/v1/stats"))
            .bearer_auth("acceptance")
            .send()
            .await
            .map_err(|e| e.to_string())?
            .json()
            .await
            .map_err(|e| e.to_string())?;
        check!(stats["items"] == 7, "http stats {stats}");
        Ok("fixtures via CLI and loopback HTTP, items=7 both ways".to_string())
    })
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("fixture parse exactness", fixture_parse_exactness),
        ("dedup and idempotence", dedup_idempotence),
        ("coverage mathematics", coverage_mathematics),
        ("desk-scale throughput", desk_scale_throughput),
        ("media integrity", media_integrity),
        ("export properties", export_properties),
        ("crash safety", crash_safety),
        ("runs without the browser extension", no_extension_needed),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
