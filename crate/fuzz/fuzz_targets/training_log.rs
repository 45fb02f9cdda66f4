#![no_main]

use libfuzzer_sys::fuzz_target;
use tmgan::trainer::TrainingLog;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = TrainingLog::parse_csv(text);
    }
});
