#![no_main]

use codesign::accuracy::ProxyDataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if data.is_empty() {
        return;
    }
    let frac = f64::from(data[0]) / 255.0;
    let Ok(text) = std::str::from_utf8(&data[1..]) else { return };
    let _ = ProxyDataset::from_csv_str(text, frac, 0);
});
