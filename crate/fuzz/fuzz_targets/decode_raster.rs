#![no_main]

use aerodepth::dataio::raster::{decode_depth, decode_raster, encode_raster};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = decode_raster(data) {
        assert_eq!(r.values.len(), r.width * r.height);
        // the reserved header word is ignored on decode and written as zero
        let again = encode_raster(r.width, r.height, &r.values);
        assert_eq!(again[..12], data[..12]);
        assert_eq!(again[16..], data[16..]);
    }
    if let Ok(d) = decode_depth(data) {
        assert!(d.values().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
});
