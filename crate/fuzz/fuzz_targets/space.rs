#![no_main]

use codesign::space::{parse_space_str, Validity};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let json = text.starts_with('{');
    if let Ok(space) = parse_space_str(text, json) {
        let p = space.default_point();
        assert_eq!(space.validate(&p), Validity::Valid);
        let _ = space.shapes(&p);
    }
});
