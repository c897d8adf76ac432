#![no_main]

use libfuzzer_sys::fuzz_target;
use tqpo::experiment::{parse_aggregate, parse_band};

fuzz_target!(|data: &[u8]| {
    let _ = parse_aggregate(data);
    let _ = parse_band(data);
});
