#![no_main]

use libfuzzer_sys::fuzz_target;
use scools_core::exploit::abi::parse_abi;
use scools_core::exploit::{generate, plan_attacks};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(abi) = parse_abi(text) else { return };
    let Some(target) = abi.first() else { return };
    if let Ok(plans) = plan_attacks(&abi, "Victim", &target.signature(), 1, 0) {
        for plan in &plans {
            let _ = generate(plan);
        }
    }
});
