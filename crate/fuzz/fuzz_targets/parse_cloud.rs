#![no_main]

use geosig::cloud::{parse_cloud, CloudFormat, SemanticScheme};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let scheme = SemanticScheme::default();
    for format in [CloudFormat::Xyz, CloudFormat::XyzLabeled] {
        if let Ok(cloud) = parse_cloud(text, format, &scheme, "fuzz") {
            // Written rows parse back to the same number of points.
            let again = parse_cloud(&cloud.to_csv(), format, &scheme, "fuzz").unwrap();
            assert_eq!(again.len(), cloud.len());
        }
    }
    let _ = CloudFormat::detect(text);
});
