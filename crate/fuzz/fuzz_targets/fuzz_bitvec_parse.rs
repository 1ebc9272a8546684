#![no_main]
//! Bit-string and bit-packed parsing round trips.

use libfuzzer_sys::fuzz_target;
use puflab::BitVec;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(v) = BitVec::parse_binary(text) {
            assert_eq!(v.to_string(), text);
        }
    }
    if !data.is_empty() {
        let len = data[0] as usize;
        let payload = &data[1..];
        if let Ok(v) = BitVec::from_le_bytes(payload, len) {
            assert_eq!(v.to_le_bytes(), payload);
        }
    }
});
