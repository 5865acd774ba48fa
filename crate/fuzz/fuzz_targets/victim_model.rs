#![no_main]

use libfuzzer_sys::fuzz_target;
use scools_core::sim::{run_attack, AttackParams, VictimModel};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(model) = VictimModel::from_json(text) else { return };
    let params = AttackParams { max_depth: 64, ..AttackParams::default() };
    if let Ok(outcome) = run_attack(&model, &params) {
        assert!(outcome.conserved);
        assert!(outcome.trace.iter().all(|e| e.depth <= 64));
    }
});
