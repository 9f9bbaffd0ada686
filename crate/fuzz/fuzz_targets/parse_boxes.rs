#![no_main]

use aerodepth::dataio::sample::parse_boxes;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(boxes) = parse_boxes(data) {
        assert!(boxes.iter().all(|b| b.validate().is_ok()));
    }
});
