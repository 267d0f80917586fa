#![no_main]

use binstyle_core::attribution::AttributionModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = AttributionModel::from_text(text);
    }
});
