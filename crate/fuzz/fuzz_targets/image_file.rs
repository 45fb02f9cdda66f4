#![no_main]

use libfuzzer_sys::fuzz_target;
use tmgan::formats::ImageFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = ImageFile::decode(data) {
        // anything accepted re-encodes to the same bytes
        assert_eq!(img.encode().unwrap(), data);
    }
});
