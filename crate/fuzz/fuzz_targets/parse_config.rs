#![no_main]

use aerodepth::dataio::checkpoint::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = parse_config(data) {
        assert!(cfg.validate().is_ok());
    }
});
