#![no_main]

use libfuzzer_sys::fuzz_target;
use tqpo::envs::{env_file_to_string, parse_env_file};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = parse_env_file(text) {
        let again = parse_env_file(&env_file_to_string(&file)).expect("serialized env file parses");
        assert_eq!(again, file);
    }
});
