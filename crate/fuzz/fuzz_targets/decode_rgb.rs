#![no_main]

use bsn_core::raster::decode_rgb;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(image) = decode_rgb(data) {
        assert_eq!(image.channels(), 3);
        assert!(image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
