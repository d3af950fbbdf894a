#![no_main]

use geosig::cloud::SemanticScheme;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(scheme) = SemanticScheme::parse(text) {
        assert_eq!(SemanticScheme::parse(&scheme.to_text()).unwrap(), scheme);
    }
});
