#![no_main]

use libfuzzer_sys::fuzz_target;
use scools_core::cfg::build_contract_cfg;
use scools_core::disasm::decode;

fuzz_target!(|data: &[u8]| {
    let Ok(stream) = decode(data) else { return };
    let contract = build_contract_cfg(&stream, None);
    for f in &contract.functions {
        assert_eq!(f.node_count, f.blocks.len());
        for b in &f.blocks {
            assert!(b.successors.iter().all(|&s| s < f.blocks.len()));
        }
    }
});
