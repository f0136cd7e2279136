#![no_main]

use bsn_core::raster::{decode_tensor, encode_tensor};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Anything the decoder accepts must re-encode to the same bytes.
    if let Ok(tensor) = decode_tensor(data) {
        let bytes = encode_tensor(&tensor).expect("decoded tensors re-encode");
        assert_eq!(bytes, data);
    }
});
