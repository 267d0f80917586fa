#![no_main]

use binstyle_core::forge::CorpusManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = CorpusManifest::parse(text) {
        assert_eq!(CorpusManifest::parse(&m.dump()).expect("written manifest parses"), m);
    }
});
