#![no_main]

use libfuzzer_sys::fuzz_target;
use tqpo::checkpoint::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(cp) = decode(data) {
        let bytes = encode(&cp);
        let again = decode(&bytes).expect("encoded checkpoint decodes");
        assert_eq!(encode(&again), bytes);
    }
});
