#![no_main]

use libfuzzer_sys::fuzz_target;
use tidal_core::ingest::parse_har;

fuzz_target!(|data: &[u8]| {
    if let Ok(capture) = parse_har(data) {
        for env in &capture.envelopes {
            env.validate().unwrap();
        }
    }
});
