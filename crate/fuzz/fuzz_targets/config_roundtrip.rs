#![no_main]

use libfuzzer_sys::fuzz_target;
use onco_control::config::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = ScenarioConfig::from_json(text) else { return };
    let written = cfg.to_json();
    let back = ScenarioConfig::from_json(&written).expect("canonical output must parse");
    assert_eq!(back, cfg);
    assert_eq!(back.to_json(), written);
});
