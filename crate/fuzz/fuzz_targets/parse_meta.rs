#![no_main]

use aerodepth::dataio::sample::parse_meta;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((_, density)) = parse_meta(data) {
        assert!(density > 0.0 && density <= 1.0);
    }
});
