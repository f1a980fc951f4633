#![no_main]

use libfuzzer_sys::fuzz_target;
use tidal_core::parser::parse_reel_payload;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(items) = parse_reel_payload(text) {
        for item in &items {
            item.check_invariants().unwrap();
        }
        assert_eq!(parse_reel_payload(text).unwrap(), items);
    }
});
