#![no_main]

use libfuzzer_sys::fuzz_target;
use tidal_core::Envelope;

fuzz_target!(|data: &[u8]| {
    if let Ok(env) = Envelope::from_json_slice(data) {
        let line = env.to_json_line();
        assert!(!line.contains('\n'));
        let again = Envelope::from_json_slice(line.as_bytes()).unwrap();
        assert_eq!(again, env);
    }
});
