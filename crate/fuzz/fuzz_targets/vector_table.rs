#![no_main]

use libfuzzer_sys::fuzz_target;
use scools_core::features::parse_vector_table;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_vector_table(text);
});
