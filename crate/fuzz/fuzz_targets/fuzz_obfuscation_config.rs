#![no_main]
//! Obfuscation config documents are untrusted: structural validity and the
//! semantic invariants (popcount, pairing degrees, permutation bijectivity)
//! are both enforced on load.

use libfuzzer_sys::fuzz_target;
use puflab::obfuscation::ObfuscationConfig;
use puflab::Challenge;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = ObfuscationConfig::from_json(data) {
        // Anything accepted must be applicable and re-serializable.
        let c = Challenge::zeros(cfg.m());
        let out = cfg.apply(&c).expect("accepted config must apply");
        assert_eq!(out.len(), cfg.m());
        let json = cfg.to_json().expect("serialize");
        let back = ObfuscationConfig::from_json(json.as_bytes()).expect("reparse");
        assert_eq!(back, cfg);
    }
});
