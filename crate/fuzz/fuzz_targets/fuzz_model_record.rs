#![no_main]

use libfuzzer_sys::fuzz_target;
use olmpc_core::features::ResidualModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(model) = ResidualModel::from_record(text) {
            let again = ResidualModel::from_record(&model.to_record()).expect("re-parse own record");
            assert_eq!(again.num_features(), model.num_features());
        }
    }
});
