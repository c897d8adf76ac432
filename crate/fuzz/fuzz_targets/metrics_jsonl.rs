#![no_main]

use libfuzzer_sys::fuzz_target;
use tqpo::metrics::{parse_jsonl, to_json_line};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_jsonl(text) {
        let out: String = rows.iter().map(|m| to_json_line(m) + "\n").collect();
        assert_eq!(parse_jsonl(&out).expect("written lines parse"), rows);
    }
});
