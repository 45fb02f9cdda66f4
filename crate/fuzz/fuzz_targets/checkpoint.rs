#![no_main]

use libfuzzer_sys::fuzz_target;
use tmgan::checkpoint::decode_any;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = decode_any(data) {
        assert_eq!(decode_any(&ckpt.encode()).unwrap(), ckpt);
    }
});
