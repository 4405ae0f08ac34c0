#![no_main]

use codesign::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // first byte picks the syntax so one corpus covers both
    let json = text.starts_with('{');
    let _ = RunConfig::from_str(text, json);
});
