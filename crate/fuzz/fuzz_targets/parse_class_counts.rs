#![no_main]

use geosig::cloud::ClassCounts;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(counts) = ClassCounts::parse(text) {
        if let Ok(d) = counts.distribution() {
            let sum: f64 = d.fractions.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
});
