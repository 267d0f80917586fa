#![no_main]

use binstyle_core::model::{parse_listings, write_listing};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(programs) = parse_listings(text) {
        for p in programs {
            let again = binstyle_core::model::parse_listing(&write_listing(&p)).expect("written listing parses");
            assert_eq!(again, p);
        }
    }
});
