#![no_main]

use bsn_core::net::parse_manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(entries) = parse_manifest(text) {
            assert!(entries.iter().all(|(_, shape)| shape.iter().all(|&d| d > 0)));
        }
    }
});
