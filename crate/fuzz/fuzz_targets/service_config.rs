#![no_main]

use libfuzzer_sys::fuzz_target;
use tidal::config::ServiceConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ServiceConfig::from_toml(text, std::path::Path::new("/srv")) {
            let _ = cfg.bind_addr(false);
        }
    }
});
