#![no_main]

use libfuzzer_sys::fuzz_target;
use tidal_core::parser::parse_highlight_payload;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(items) = parse_highlight_payload(text) {
            for item in &items {
                item.check_invariants().unwrap();
                assert!(item.highlight_id.is_some());
            }
        }
    }
});
