#![no_main]

use geosig::pipeline::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(config) = RunConfig::from_toml(text) {
        let _ = config.validate();
        let _ = config.hash();
    }
});
