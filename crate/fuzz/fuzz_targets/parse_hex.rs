#![no_main]

use libfuzzer_sys::fuzz_target;
use scools_core::disasm::{decode_hex, parse_hex};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(bytes) = parse_hex(text) {
        assert_eq!(parse_hex(&hex::encode(&bytes)).unwrap(), bytes);
    }
    let _ = decode_hex(text);
});
