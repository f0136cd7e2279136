#![no_main]

use bsn_core::geometry::{distance_transform, extract_contour};
use bsn_core::raster::{decode_mask, encode_mask};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(mask) = decode_mask(data) else {
        return;
    };
    // Keep the geometry work bounded on huge declared sizes.
    if mask.len() <= 1 << 16 {
        let contour = extract_contour(&mask);
        if let Ok(d) = distance_transform(&contour) {
            assert!(d.data().iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
    let again = decode_mask(&encode_mask(&mask).unwrap()).unwrap();
    assert_eq!(again, mask);
});
