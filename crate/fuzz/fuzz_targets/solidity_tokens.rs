#![no_main]

use libfuzzer_sys::fuzz_target;
use scools_core::exploit::tokens::{outline, tokenize};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(tokens) = tokenize(text) {
        let _ = outline(&tokens);
    }
});
