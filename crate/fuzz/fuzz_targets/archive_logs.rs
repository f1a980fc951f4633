#![no_main]

use libfuzzer_sys::fuzz_target;
use tidal_core::Archive;

// Arbitrary log contents must open cleanly or fail with an error.
fuzz_target!(|data: &[u8]| {
    let dir = tempfile::tempdir().unwrap();
    drop(Archive::init(dir.path()).unwrap());
    let mut parts = data.splitn(3, |&b| b == 0);
    for name in ["items.ndjson", "sessions.ndjson", "media.ndjson"] {
        std::fs::write(dir.path().join(name), parts.next().unwrap_or_default()).unwrap();
    }
    if let Ok(archive) = Archive::init(dir.path()) {
        let stats = archive.stats();
        assert_eq!(stats.items, archive.index_snapshot().items().len());
    }
});
