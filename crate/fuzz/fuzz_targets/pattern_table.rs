#![no_main]

use libfuzzer_sys::fuzz_target;
use tidal_core::PatternTable;

// First line is a URL to classify, the rest a pattern table.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let (url, table_src) = text.split_once('\n').unwrap_or((text, ""));
    let _ = PatternTable::default().classify(url);
    if let Ok(table) = PatternTable::from_toml_str(table_src) {
        let _ = table.classify(url);
    }
});
