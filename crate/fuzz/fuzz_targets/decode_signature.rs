#![no_main]

use geosig::signature::{decode_signature, encode_signature};
use libfuzzer_sys::fuzz_target;

// Input layout: sidecar JSON, a NUL byte, then the PNG stream.
fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|&b| b == 0) else {
        return;
    };
    let Ok(sidecar) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    if let Ok(sig) = decode_signature(&data[split + 1..], sidecar) {
        let (png, json) = encode_signature(&sig).unwrap();
        assert_eq!(decode_signature(&png, &json).unwrap(), sig);
    }
});
