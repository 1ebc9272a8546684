#![no_main]
//! The line-oriented experiment config parser must never panic on
//! arbitrary text.

use libfuzzer_sys::fuzz_target;
use puflab::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = ExperimentConfig::parse(text);
    }
});
