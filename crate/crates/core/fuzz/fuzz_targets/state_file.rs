#![no_main]

use labelswitch::io::{decode_state, encode_state};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(state) = decode_state(data) {
        let bytes = encode_state(&state);
        assert_eq!(decode_state(&bytes).unwrap(), state);
    }
});
