#![no_main]

use libfuzzer_sys::fuzz_target;
use scools_core::disasm::decode;

fuzz_target!(|data: &[u8]| {
    if let Ok(stream) = decode(data) {
        assert_eq!(stream.encode(), data);
    }
});
