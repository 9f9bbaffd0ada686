#![no_main]

use aerodepth::dataio::sample::decode_rgb_png;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_rgb_png(data) {
        assert_eq!(img.data().len(), img.width() * img.height() * 3);
    }
});
