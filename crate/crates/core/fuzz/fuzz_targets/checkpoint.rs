#![no_main]

use labelswitch::detector::checkpoint::{decode, encode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(det) = decode(data) {
        let bytes = encode(&det);
        assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
    }
});
