#![no_main]

use libfuzzer_sys::fuzz_target;
use scools_cli::config::{parse_config_file, Preset, RunConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(pairs) = parse_config_file(text) else { return };
    let mut cfg = RunConfig::preset(Preset::Desk);
    for (k, v) in &pairs {
        let _ = cfg.set(k, v);
    }
    let _ = cfg.validate();
});
