//! Fuzz the scenario JSON loader: parsing plus validation must never panic,
//! and any accepted scenario must survive a save → reload cycle.

#![no_main]

use libfuzzer_sys::fuzz_target;
use tla_core::scenario::parse_scenario;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(scenario) = parse_scenario(text) else { return };
    let json = serde_json::to_string(&scenario).expect("accepted scenario must serialize");
    let reparsed = parse_scenario(&json).expect("saved scenario must reload");
    assert_eq!(scenario, reparsed, "scenario changed across a round trip");
});
