#![no_main]

use codesign::pareto::read_bundle_scores;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((scores, front)) = read_bundle_scores(data) {
        assert_eq!(scores.len(), front.len());
    }
});
