#![no_main]

use libfuzzer_sys::fuzz_target;
use tqpo::experiment::ExperimentManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = ExperimentManifest::from_toml_str(text) {
        if let Ok(runs) = m.expand() {
            assert!(runs.iter().all(|c| c.validate().is_ok()));
        }
    }
});
