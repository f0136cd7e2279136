#![no_main]

use bsn_cli::config::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Err(e) = parse_config(text) {
            // Diagnostics must stay on one line.
            assert!(!e.to_string().contains('\n'));
        }
    }
});
