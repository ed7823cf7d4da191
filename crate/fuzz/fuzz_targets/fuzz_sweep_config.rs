#![no_main]

use libfuzzer_sys::fuzz_target;
use olmpc_core::harness::SweepSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = SweepSpec::from_json(text) {
            assert!(!spec.configs().is_empty());
        }
    }
});
