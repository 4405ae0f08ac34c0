#![no_main]

use codesign::trace::Summary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = Summary::from_json_str(text) {
        let _ = Summary::from_json_str(&s.to_json_pretty());
    }
});
