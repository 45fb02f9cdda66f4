#![no_main]

use libfuzzer_sys::fuzz_target;
use tmgan::formats::Manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = Manifest::parse_csv(text) {
            assert_eq!(Manifest::parse_csv(&m.to_csv()).unwrap(), m);
        }
    }
});
