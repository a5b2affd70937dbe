//! Fuzz the CSV log reader used by `tla plot`: arbitrary text must never
//! panic, and rendering whatever it accepts must be idempotent (the basis
//! of byte-stable plot regeneration).

#![no_main]

use libfuzzer_sys::fuzz_target;
use tla_core::plot::parse_csv_log;
use tla_core::run::to_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(rows) = parse_csv_log(text) else { return };
    // Compare rendered strings, not rows: the log format admits NaN fields,
    // which are unequal to themselves but must still render stably.
    let first = to_csv(&rows);
    let rows_again = parse_csv_log(&first).expect("rendered log must reparse");
    let second = to_csv(&rows_again);
    assert_eq!(first, second, "render → parse → render must be a fixed point");
});
