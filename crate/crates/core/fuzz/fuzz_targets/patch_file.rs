#![no_main]

use labelswitch::io::{decode_patch, encode_patch};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(patch) = decode_patch(data) {
        let again = decode_patch(&encode_patch(&patch)).unwrap();
        assert_eq!(encode_patch(&again), encode_patch(&patch));
    }
});
