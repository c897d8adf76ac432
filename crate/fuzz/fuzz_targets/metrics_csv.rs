#![no_main]

use libfuzzer_sys::fuzz_target;
use tqpo::metrics::parse_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_csv(data) {
        assert!(rows.iter().all(|m| m.lambda >= 0.0));
    }
});
