#![no_main]

use libfuzzer_sys::fuzz_target;
use olmpc_core::harness::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ScenarioConfig::from_json(text) {
        // Anything accepted must survive its own serialization.
        let again = ScenarioConfig::from_json(&cfg.to_json()).expect("re-parse");
        assert_eq!(again.fingerprint(), cfg.fingerprint());
    }
});
