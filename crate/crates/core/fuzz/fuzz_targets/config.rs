#![no_main]

use labelswitch::io::{config_to_string, parse_config, parse_config_with_overrides};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // the first line doubles as a --set override
    let (head, body) = text.split_once('\n').unwrap_or(("", text));
    let _ = parse_config_with_overrides(body, &[head.to_string()]);
    if let Ok(config) = parse_config(text) {
        let again = parse_config(&config_to_string(&config).unwrap()).unwrap();
        assert_eq!(again, config);
    }
});
