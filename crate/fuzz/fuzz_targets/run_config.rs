#![no_main]

use libfuzzer_sys::fuzz_target;
use tmgan::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = RunConfig::parse_bytes(data) {
        let again = RunConfig::parse(&cfg.to_text()).expect("canonical text parses");
        assert_eq!(again, cfg);
    }
});
