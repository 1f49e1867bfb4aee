#![no_main]

use hawkes_dividend::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_json(s) {
            // Anything accepted must survive a round trip unchanged.
            let again = RunConfig::from_json(&cfg.to_json_pretty()).expect("re-parse");
            assert_eq!(again, cfg);
        }
    }
});
