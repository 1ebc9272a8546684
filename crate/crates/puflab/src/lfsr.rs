//! Galois linear-feedback shift register used as the challenge generator.

use crate::bits::Challenge;
use crate::error::{Error, Result};
use std::collections::HashSet;

/// Default 64-bit maximal-length feedback polynomial (taps 64, 63, 61, 60).
pub const DEFAULT_TAPS: u64 = 0xD800_0000_0000_0000;
pub const DEFAULT_WIDTH: u32 = 64;

/// Right-shifting Galois LFSR. The emitted bit is the low state bit; when it
/// is 1 the taps mask is folded back into the shifted state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaloisLfsr {
    width: u32,
    taps: u64,
    state: u64,
}

impl GaloisLfsr {
    pub fn new(width: u32, taps: u64, state: u64) -> Result<Self> {
        if !(4..=64).contains(&width) {
            return Err(Error::invalid(format!(
                "LFSR width must be in 4..=64, got {width}"
            )));
        }
        let mask = width_mask(width);
        if state == 0 {
            return Err(Error::invalid("LFSR state must be nonzero"));
        }
        if state & !mask != 0 {
            return Err(Error::invalid(format!(
                "LFSR state 0x{state:x} exceeds width {width}"
            )));
        }
        if taps & !mask != 0 || taps == 0 {
            return Err(Error::invalid(format!(
                "LFSR taps 0x{taps:x} invalid for width {width}"
            )));
        }
        Ok(GaloisLfsr { width, taps, state })
    }

    pub fn with_defaults(seed_state: u64) -> Result<Self> {
        GaloisLfsr::new(DEFAULT_WIDTH, DEFAULT_TAPS, seed_state)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn taps(&self) -> u64 {
        self.taps
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    /// Advances one step and returns the emitted bit.
    #[inline]
    pub fn next_bit(&mut self) -> bool {
        let out = self.state & 1 == 1;
        self.state >>= 1;
        if out {
            self.state ^= self.taps;
        }
        out
    }

    /// Fills a challenge of `m` bits from successive output bits.
    pub fn next_challenge(&mut self, m: usize) -> Challenge {
        let mut c = Challenge::zeros(m);
        for i in 0..m {
            if self.next_bit() {
                c.set(i, true);
            }
        }
        c
    }
}

fn width_mask(width: u32) -> u64 {
    if width == 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// Generates `count` distinct challenges of `m` bits each.
///
/// Repeated challenges (possible when the register period is small relative
/// to `count * m`) are dropped; generation fails once the scan budget is
/// exhausted rather than looping forever on a short cycle.
pub fn lfsr_generate(lfsr: &mut GaloisLfsr, count: usize, m: usize) -> Result<Vec<Challenge>> {
    if count == 0 {
        return Err(Error::invalid("challenge count must be at least 1"));
    }
    if m == 0 {
        return Err(Error::invalid("challenge width must be at least 1"));
    }
    if lfsr.width < 8 {
        return Err(Error::invalid(format!(
            "challenge generation requires LFSR width >= 8, got {}",
            lfsr.width
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut seen: HashSet<Challenge> = HashSet::with_capacity(count * 2);
    // Enough slack to ride out duplicates without masking a short cycle.
    let budget = count
        .saturating_mul(4)
        .saturating_add(1 << lfsr.width.min(20));
    for _ in 0..budget {
        let c = lfsr.next_challenge(m);
        if seen.insert(c.clone()) {
            out.push(c);
            if out.len() == count {
                return Ok(out);
            }
        }
    }
    Err(Error::Generation(format!(
        "LFSR produced only {} distinct challenges of {count} requested; \
         period too short for width {}",
        out.len(),
        lfsr.width
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Oracle: the register rule transcribed step by step, kept separate from
    /// the implementation path it checks.
    fn naive_steps(width: u32, taps: u64, state: u64, n: usize) -> (Vec<u64>, Vec<u8>) {
        let mask = if width == 64 {
            u64::MAX
        } else {
            (1u64 << width) - 1
        };
        let mut s = state;
        let mut states = vec![s];
        let mut bits = Vec::new();
        for _ in 0..n {
            let emitted = (s & 1) as u8;
            s >>= 1;
            if emitted == 1 {
                s = (s ^ taps) & mask;
            }
            states.push(s);
            bits.push(emitted);
        }
        (states, bits)
    }

    #[test]
    fn four_bit_sequence_matches_hand_derivation() {
        // 0001 -> 1100 -> 0110 -> 0011 -> 1101, emitting 1,0,0,1.
        let mut lfsr = GaloisLfsr::new(4, 0b1100, 0b0001).unwrap();
        let expected_states = [0b1100, 0b0110, 0b0011, 0b1101];
        let expected_bits = [true, false, false, true];
        for i in 0..4 {
            assert_eq!(lfsr.next_bit(), expected_bits[i], "bit {i}");
            assert_eq!(lfsr.state(), expected_states[i], "state after step {i}");
        }
    }

    #[test]
    fn implementation_matches_naive_oracle() {
        let (states, bits) = naive_steps(16, 0xD008, 0xACE1, 200);
        let mut lfsr = GaloisLfsr::new(16, 0xD008, 0xACE1).unwrap();
        for i in 0..200 {
            assert_eq!(lfsr.next_bit() as u8, bits[i]);
            assert_eq!(lfsr.state(), states[i + 1]);
        }
    }

    #[test]
    fn four_bit_period_is_maximal() {
        let mut lfsr = GaloisLfsr::new(4, 0b1100, 0b0001).unwrap();
        let mut period = 0u32;
        loop {
            lfsr.next_bit();
            period += 1;
            if lfsr.state() == 0b0001 {
                break;
            }
            assert!(period < 100, "no cycle found");
        }
        assert_eq!(period, 15);
    }

    #[test]
    fn primitive_polynomials_reach_full_period() {
        // Known maximal-length taps for right-shift Galois form.
        for &(width, taps) in &[(8u32, 0xB8u64), (12, 0xE08), (16, 0xD008)] {
            let mut lfsr = GaloisLfsr::new(width, taps, 1).unwrap();
            let full = (1u64 << width) - 1;
            let mut period = 0u64;
            loop {
                lfsr.next_bit();
                period += 1;
                if lfsr.state() == 1 {
                    break;
                }
                assert!(period <= full, "width {width} exceeded 2^w - 1 steps");
            }
            assert_eq!(period, full, "width {width} taps 0x{taps:x} not maximal");
        }
    }

    #[test]
    fn zero_state_rejected() {
        assert!(GaloisLfsr::new(16, 0xD008, 0).is_err());
    }

    #[test]
    fn generate_is_deterministic_and_distinct() {
        let mut a = GaloisLfsr::with_defaults(0x1234_5678).unwrap();
        let mut b = GaloisLfsr::with_defaults(0x1234_5678).unwrap();
        let ca = lfsr_generate(&mut a, 500, 64).unwrap();
        let cb = lfsr_generate(&mut b, 500, 64).unwrap();
        assert_eq!(ca, cb);
        let set: HashSet<_> = ca.iter().collect();
        assert_eq!(set.len(), 500);
    }

    #[test]
    fn generate_rejects_narrow_register() {
        let mut lfsr = GaloisLfsr::new(4, 0b1100, 1).unwrap();
        assert!(lfsr_generate(&mut lfsr, 10, 8).is_err());
    }

    #[test]
    fn generate_fails_on_short_cycle() {
        // Width 8 gives at most 255 distinct states; asking for far more
        // 8-bit challenges than the period supports must error, not spin.
        let mut lfsr = GaloisLfsr::new(8, 0xB8, 1).unwrap();
        assert!(lfsr_generate(&mut lfsr, 5000, 8).is_err());
    }
}
