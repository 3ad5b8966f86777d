#![no_main]

use labelswitch::detector::SceneParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(params) = toml::from_str::<SceneParams>(text) {
        let _ = params.validate();
    }
});
