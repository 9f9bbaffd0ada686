#![no_main]

use aerodepth::dataio::checkpoint::{decode_params, encode_params};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = decode_params(data) {
        let bytes = encode_params(&params);
        assert_eq!(encode_params(&decode_params(&bytes).unwrap()), bytes);
    }
});
