#![no_main]

use binstyle_core::model::SignatureSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = SignatureSet::parse(text);
    }
});
