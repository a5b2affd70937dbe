//! Fuzz the dependability-contract XML parser: arbitrary input must never
//! panic, and anything it accepts must survive a serialize → reparse cycle
//! unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;
use tla_core::ddi::{parse_ddi, serialize_ddi};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(contract) = parse_ddi(text) else { return };
    let xml = serialize_ddi(&contract);
    let reparsed = parse_ddi(&xml).expect("serialized contract must reparse");
    assert_eq!(contract, reparsed, "contract changed across a round trip");
});
