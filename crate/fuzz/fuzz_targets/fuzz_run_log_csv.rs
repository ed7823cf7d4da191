#![no_main]

use libfuzzer_sys::fuzz_target;
use olmpc_core::harness::{parse_csv_log, write_csv_log};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_csv_log(data) {
        let mut out = Vec::new();
        write_csv_log(&records, &mut out).expect("write to memory");
        let again = parse_csv_log(out.as_slice()).expect("re-parse own output");
        assert_eq!(again.len(), records.len());
    }
});
