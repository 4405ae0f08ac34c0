#![no_main]

use codesign::space::DesignPoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = DesignPoint::from_json_str(text) {
        assert_eq!(DesignPoint::from_json_str(&p.to_json_pretty()).unwrap(), p);
    }
});
