#![no_main]

use libfuzzer_sys::fuzz_target;
use tqpo::fixture::{parse, to_string};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(f) = parse(text) {
        if f.cases.iter().all(|c| c.q.is_finite() && c.logits.iter().all(|x| x.is_finite())) {
            let _ = parse(&to_string(&f));
        }
    }
});
