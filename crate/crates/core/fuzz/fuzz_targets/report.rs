#![no_main]

use labelswitch::io::parse_report;
use labelswitch::io::report::report_to_string;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = parse_report(text) {
        assert_eq!(parse_report(&report_to_string(&report).unwrap()).unwrap(), report);
    }
});
