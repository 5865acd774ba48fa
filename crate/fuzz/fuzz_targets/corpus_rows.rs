#![no_main]

use libfuzzer_sys::fuzz_target;
use scools_core::dataset::{read_rows, CorpusFormat};

fuzz_target!(|data: &[u8]| {
    let _ = read_rows(data, CorpusFormat::Csv);
    let _ = read_rows(data, CorpusFormat::JsonLines);
});
