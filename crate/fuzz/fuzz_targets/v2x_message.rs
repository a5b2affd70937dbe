//! Fuzz the V2X message decoder: arbitrary JSON must never panic the
//! deserializer, and any accepted message must survive re-encoding.

#![no_main]

use libfuzzer_sys::fuzz_target;
use tla_core::world::V2xMessage;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(message) = serde_json::from_str::<V2xMessage>(text) else { return };
    let json = serde_json::to_string(&message).expect("accepted message must re-encode");
    let reparsed: V2xMessage = serde_json::from_str(&json).expect("re-encoded message must decode");
    assert_eq!(message, reparsed, "message changed across a round trip");
});
