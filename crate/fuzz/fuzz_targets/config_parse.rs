#![no_main]

use libfuzzer_sys::fuzz_target;
use onco_control::config::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // errors must carry a position or an invariant, never panic
        let _ = ScenarioConfig::from_json(text);
    }
});
