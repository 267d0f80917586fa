#![no_main]

use binstyle_core::store::FeatureStore;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = FeatureStore::parse(text) {
        let again = FeatureStore::parse(&report.store.to_text()).expect("written store parses");
        assert_eq!(again.store, report.store);
    }
});
