#![no_main]

use libfuzzer_sys::fuzz_target;
use scools_core::features::GraphSample;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sample) = GraphSample::from_json(text) {
        assert_eq!(GraphSample::from_json(&sample.to_json()).unwrap(), sample);
    }
});
