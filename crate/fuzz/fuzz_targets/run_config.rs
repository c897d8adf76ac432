#![no_main]

use libfuzzer_sys::fuzz_target;
use tqpo::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = RunConfig::from_toml_str(text) else { return };
    if cfg.validate().is_ok() {
        let again = RunConfig::from_toml_str(&cfg.to_toml_string()).expect("serialized config parses");
        assert_eq!(again, cfg);
    }
});
