//! Challenge-obfuscation front-ends placed before an XOR ring PUF.
//!
//! Architecture 1 XORs the challenge with a fixed secret mask holding
//! exactly m/2 ones. Architecture 2 routes every original bit into two
//! 2-to-1 selector pairs: mux j reads bits (a_j, b_j) as its selector,
//! looks up a fixed 4-entry constant table with two ones, and the mux
//! outputs are scattered by a secret position permutation.

use crate::bits::{BitVec, Challenge};
use crate::error::{Error, Result};
use crate::seed::{self, Prng};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// The six 4-bit constant tables with exactly two ones, indexed by selector
/// value `2*c[a] + c[b]`.
const TWO_ONE_TABLES: [[bool; 4]; 6] = [
    [false, false, true, true],
    [false, true, false, true],
    [false, true, true, false],
    [true, false, false, true],
    [true, false, true, false],
    [true, true, false, false],
];

const SHUFFLE_RETRY_LIMIT: usize = 10_000;

/// Architecture 1: fixed XOR mask with popcount exactly m/2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub m: usize,
    pub seed: u64,
    #[serde(with = "bitvec_string")]
    pub mask: BitVec,
}

impl MaskConfig {
    pub fn new(m: usize, seed_value: u64) -> Result<Self> {
        if m < 2 || m % 2 != 0 {
            return Err(Error::invalid(format!(
                "mask width must be even and >= 2, got {m}"
            )));
        }
        let mut rng = seed::rng_from_seed(seed::derive_labeled(seed_value, "obf-mask", 0));
        let mut indices: Vec<usize> = (0..m).collect();
        indices.shuffle(&mut rng);
        let mut mask = BitVec::zeros(m);
        for &i in indices.iter().take(m / 2) {
            mask.set(i, true);
        }
        Ok(MaskConfig {
            m,
            seed: seed_value,
            mask,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: self.mask.len(),
            });
        }
        if self.m < 2 || self.m % 2 != 0 {
            return Err(Error::invalid("mask width must be even and >= 2"));
        }
        if self.mask.count_ones() != self.m / 2 {
            return Err(Error::invalid(format!(
                "mask must have exactly {} ones, found {}",
                self.m / 2,
                self.mask.count_ones()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, c: &Challenge) -> Result<Challenge> {
        c.xor(&self.mask)
    }
}

/// Architecture 2: selector pairing, per-mux constant tables, and a final
/// position permutation. `selector` records the bit-order convention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffleConfig {
    pub m: usize,
    pub seed: u64,
    /// Mux fan-in; only 2 is implemented, the field is kept in the format.
    pub n: usize,
    /// Selector convention: a_j is the high bit.
    pub selector: String,
    pub pairs: Vec<(usize, usize)>,
    #[serde(with = "table_strings")]
    pub constants: Vec<[bool; 4]>,
    pub perm: Vec<usize>,
}

impl ShuffleConfig {
    pub fn new(m: usize, seed_value: u64) -> Result<Self> {
        if m < 4 || m % 2 != 0 {
            return Err(Error::invalid(format!(
                "shuffle width must be even and >= 4, got {m}"
            )));
        }
        let mut rng = seed::rng_from_seed(seed::derive_labeled(seed_value, "obf-shuffle", 0));
        let pairs = sample_pairing(m, &mut rng)?;
        let constants: Vec<[bool; 4]> = (0..m)
            .map(|_| TWO_ONE_TABLES[rng.gen_range(0..TWO_ONE_TABLES.len())])
            .collect();
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let cfg = ShuffleConfig {
            m,
            seed: seed_value,
            n: 2,
            selector: "2*c[a]+c[b]".to_string(),
            pairs,
            constants,
            perm,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_parts(
        m: usize,
        pairs: Vec<(usize, usize)>,
        constants: Vec<[bool; 4]>,
        perm: Vec<usize>,
    ) -> Result<Self> {
        let cfg = ShuffleConfig {
            m,
            seed: 0,
            n: 2,
            selector: "2*c[a]+c[b]".to_string(),
            pairs,
            constants,
            perm,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m;
        if m < 4 || m % 2 != 0 {
            return Err(Error::invalid("shuffle width must be even and >= 4"));
        }
        if self.n != 2 {
            return Err(Error::invalid(format!(
                "only 2-to-1 muxes are supported, got n = {}",
                self.n
            )));
        }
        if self.pairs.len() != m || self.constants.len() != m || self.perm.len() != m {
            return Err(Error::invalid(format!(
                "expected {m} pairs/constants/perm entries, got {}/{}/{}",
                self.pairs.len(),
                self.constants.len(),
                self.perm.len()
            )));
        }
        let mut degree = vec![0usize; m];
        let mut seen = std::collections::HashSet::with_capacity(m);
        for &(a, b) in &self.pairs {
            if a >= m || b >= m {
                return Err(Error::invalid(format!("pair ({a},{b}) out of range")));
            }
            if a == b {
                return Err(Error::invalid(format!("self-pair ({a},{a})")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::invalid(format!("duplicate pair {{{a},{b}}}")));
            }
            degree[a] += 1;
            degree[b] += 1;
        }
        if let Some(i) = degree.iter().position(|&d| d != 2) {
            return Err(Error::invalid(format!(
                "bit {i} appears in {} pairs, expected 2",
                degree[i]
            )));
        }
        for (j, table) in self.constants.iter().enumerate() {
            let ones = table.iter().filter(|&&v| v).count();
            if ones != 2 {
                return Err(Error::invalid(format!(
                    "constant table {j} has {ones} ones, expected 2"
                )));
            }
        }
        let mut hit = vec![false; m];
        for &p in &self.perm {
            if p >= m {
                return Err(Error::invalid(format!("perm entry {p} out of range")));
            }
            if hit[p] {
                return Err(Error::invalid(format!("perm value {p} repeated")));
            }
            hit[p] = true;
        }
        Ok(())
    }

    pub fn apply(&self, c: &Challenge) -> Result<Challenge> {
        if c.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: c.len(),
            });
        }
        let mut out = Challenge::zeros(self.m);
        for (j, &(a, b)) in self.pairs.iter().enumerate() {
            let selector = (c.get(a) as usize) << 1 | c.get(b) as usize;
            out.set(self.perm[j], self.constants[j][selector]);
        }
        Ok(out)
    }
}

/// Draws a pairing where every bit sits in exactly two distinct pairs: the
/// cycle edges of a uniform permutation, retried until no cycle is shorter
/// than 3 (short cycles would create self-pairs or duplicates).
fn sample_pairing(m: usize, rng: &mut Prng) -> Result<Vec<(usize, usize)>> {
    for _ in 0..SHUFFLE_RETRY_LIMIT {
        let mut sigma: Vec<usize> = (0..m).collect();
        sigma.shuffle(rng);
        if min_cycle_len(&sigma) >= 3 {
            return Ok((0..m).map(|v| (v, sigma[v])).collect());
        }
    }
    Err(Error::Generation(format!(
        "no valid selector pairing after {SHUFFLE_RETRY_LIMIT} permutation draws (m = {m})"
    )))
}

fn min_cycle_len(sigma: &[usize]) -> usize {
    let mut visited = vec![false; sigma.len()];
    let mut min_len = usize::MAX;
    for start in 0..sigma.len() {
        if visited[start] {
            continue;
        }
        let mut len = 0;
        let mut v = start;
        while !visited[v] {
            visited[v] = true;
            v = sigma[v];
            len += 1;
        }
        min_len = min_len.min(len);
    }
    min_len
}

/// Either obfuscation front-end, as stored in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObfuscationConfig {
    Mask(MaskConfig),
    Shuffle(ShuffleConfig),
}

impl ObfuscationConfig {
    pub fn apply(&self, c: &Challenge) -> Result<Challenge> {
        match self {
            ObfuscationConfig::Mask(cfg) => cfg.apply(c),
            ObfuscationConfig::Shuffle(cfg) => cfg.apply(c),
        }
    }

    pub fn m(&self) -> usize {
        match self {
            ObfuscationConfig::Mask(cfg) => cfg.m,
            ObfuscationConfig::Shuffle(cfg) => cfg.m,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ObfuscationConfig::Mask(cfg) => cfg.seed,
            ObfuscationConfig::Shuffle(cfg) => cfg.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ObfuscationConfig::Mask(cfg) => cfg.validate(),
            ObfuscationConfig::Shuffle(cfg) => cfg.validate(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a config document.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: ObfuscationConfig = serde_json::from_slice(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

mod bitvec_string {
    use super::BitVec;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BitVec, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BitVec, D::Error> {
        let s = String::deserialize(d)?;
        BitVec::parse_binary(&s).map_err(serde::de::Error::custom)
    }
}

mod table_strings {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tables: &[[bool; 4]], s: S) -> Result<S::Ok, S::Error> {
        let strings: Vec<String> = tables
            .iter()
            .map(|t| t.iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect();
        serde::Serialize::serialize(&strings, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<[bool; 4]>, D::Error> {
        let strings: Vec<String> = Vec::deserialize(d)?;
        strings
            .into_iter()
            .map(|s| {
                let bytes = s.as_bytes();
                if bytes.len() != 4 {
                    return Err(serde::de::Error::custom(format!(
                        "constant table must have 4 bits, got {:?}",
                        s
                    )));
                }
                let mut t = [false; 4];
                for (i, &b) in bytes.iter().enumerate() {
                    match b {
                        b'0' => {}
                        b'1' => t[i] = true,
                        _ => {
                            return Err(serde::de::Error::custom(format!(
                                "invalid table character in {:?}",
                                s
                            )))
                        }
                    }
                }
                Ok(t)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use std::collections::HashSet;

    #[test]
    fn mask_has_half_ones_and_is_deterministic() {
        let a = MaskConfig::new(64, 7).unwrap();
        let b = MaskConfig::new(64, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mask.count_ones(), 32);
        a.validate().unwrap();
        assert!(MaskConfig::new(63, 7).is_err());
    }

    #[test]
    fn mask_seed_sweep_covers_all_arrangements() {
        // C(4,2) = 6 possible two-one masks at m = 4.
        let mut seen = HashSet::new();
        for s in 1..=100u64 {
            seen.insert(MaskConfig::new(4, s).unwrap().mask.to_string());
        }
        assert_eq!(seen.len(), 6, "seen: {seen:?}");
    }

    #[test]
    fn mask_apply_worked_example() {
        let cfg = MaskConfig {
            m: 4,
            seed: 0,
            mask: BitVec::parse_binary("1010").unwrap(),
        };
        cfg.validate().unwrap();
        let c = BitVec::parse_binary("1100").unwrap();
        assert_eq!(cfg.apply(&c).unwrap().to_string(), "0110");
        // Involution.
        assert_eq!(cfg.apply(&cfg.apply(&c).unwrap()).unwrap(), c);
        // Dimension check.
        assert!(cfg.apply(&BitVec::zeros(6)).is_err());
    }

    #[test]
    fn mask_distance_is_always_half() {
        let cfg = MaskConfig::new(64, 3).unwrap();
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            let mut c = Challenge::zeros(64);
            for i in 0..64 {
                c.set(i, rng.gen::<bool>());
            }
            let out = cfg.apply(&c).unwrap();
            assert_eq!(c.hamming_distance(&out).unwrap(), 32);
        }
    }

    #[test]
    fn shuffle_invariants_hold_for_many_seeds() {
        for s in 0..100u64 {
            let cfg = ShuffleConfig::new(64, s).unwrap();
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn shuffle_pairing_is_two_regular() {
        // m = 4: the pair multiset must be a 2-regular simple graph,
        // checked by explicit degree count.
        for s in 0..50u64 {
            let cfg = ShuffleConfig::new(4, s).unwrap();
            let mut degree = [0usize; 4];
            let mut uniq = HashSet::new();
            for &(a, b) in &cfg.pairs {
                assert_ne!(a, b);
                assert!(uniq.insert((a.min(b), a.max(b))));
                degree[a] += 1;
                degree[b] += 1;
            }
            assert_eq!(degree, [2, 2, 2, 2]);
        }
    }

    #[test]
    fn shuffle_is_deterministic_per_seed() {
        assert_eq!(
            ShuffleConfig::new(64, 3).unwrap(),
            ShuffleConfig::new(64, 3).unwrap()
        );
        assert_ne!(
            ShuffleConfig::new(64, 3).unwrap(),
            ShuffleConfig::new(64, 4).unwrap()
        );
        assert!(ShuffleConfig::new(2, 1).is_err());
    }

    #[test]
    fn shuffle_worked_mux_example() {
        let table = [false, true, true, false]; // "0110" indexed 00,01,10,11
        let cfg = ShuffleConfig::from_parts(
            4,
            vec![(0, 1), (1, 2), (2, 3), (3, 0)],
            vec![table; 4],
            vec![0, 1, 2, 3],
        )
        .unwrap();
        let out = cfg.apply(&BitVec::parse_binary("1010").unwrap()).unwrap();
        assert_eq!(out.to_string(), "1111");
        let zeros = cfg.apply(&BitVec::parse_binary("0000").unwrap()).unwrap();
        assert_eq!(zeros.to_string(), "0000");
    }

    #[test]
    fn from_parts_rejects_bad_configs() {
        let t = [false, true, true, false];
        // Duplicate pair.
        assert!(ShuffleConfig::from_parts(
            4,
            vec![(0, 1), (1, 0), (2, 3), (3, 2)],
            vec![t; 4],
            vec![0, 1, 2, 3]
        )
        .is_err());
        // Self-pair.
        assert!(ShuffleConfig::from_parts(
            4,
            vec![(0, 0), (1, 2), (2, 3), (3, 1)],
            vec![t; 4],
            vec![0, 1, 2, 3]
        )
        .is_err());
        // Bad constant table.
        assert!(ShuffleConfig::from_parts(
            4,
            vec![(0, 1), (1, 2), (2, 3), (3, 0)],
            vec![[true, true, true, false]; 4],
            vec![0, 1, 2, 3]
        )
        .is_err());
        // Non-bijective perm.
        assert!(ShuffleConfig::from_parts(
            4,
            vec![(0, 1), (1, 2), (2, 3), (3, 0)],
            vec![t; 4],
            vec![0, 0, 2, 3]
        )
        .is_err());
    }

    #[test]
    fn single_bit_flip_touches_at_most_two_outputs() {
        // Exhaustive at m = 8: each input bit feeds exactly two muxes.
        let cfg = ShuffleConfig::new(8, 11).unwrap();
        for word in 0..256u16 {
            let mut c = Challenge::zeros(8);
            for i in 0..8 {
                c.set(i, word >> i & 1 == 1);
            }
            let base = cfg.apply(&c).unwrap();
            for i in 0..8 {
                let mut flipped = c.clone();
                flipped.flip(i);
                let out = cfg.apply(&flipped).unwrap();
                let d = base.hamming_distance(&out).unwrap();
                assert!(d <= 2, "flip of bit {i} changed {d} outputs");
            }
        }
    }

    #[test]
    fn flips_do_change_outputs_sometimes() {
        let cfg = ShuffleConfig::new(64, 5).unwrap();
        let mut rng = rng_from_seed(2);
        let mut changed = 0usize;
        let mut total = 0usize;
        for _ in 0..200 {
            let mut c = Challenge::zeros(64);
            for i in 0..64 {
                c.set(i, rng.gen::<bool>());
            }
            let base = cfg.apply(&c).unwrap();
            for i in 0..64 {
                let mut f = c.clone();
                f.flip(i);
                if cfg.apply(&f).unwrap() != base {
                    changed += 1;
                }
                total += 1;
            }
        }
        assert!(changed > 0);
        // Two-one tables are non-constant in at least one selector bit, so
        // flips propagate often, not rarely.
        assert!(changed as f64 / total as f64 > 0.25);
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let mask = ObfuscationConfig::Mask(MaskConfig::new(64, 9).unwrap());
        let json = mask.to_json().unwrap();
        assert_eq!(ObfuscationConfig::from_json(json.as_bytes()).unwrap(), mask);

        let shuffle = ObfuscationConfig::Shuffle(ShuffleConfig::new(16, 9).unwrap());
        let json = shuffle.to_json().unwrap();
        assert_eq!(
            ObfuscationConfig::from_json(json.as_bytes()).unwrap(),
            shuffle
        );

        // Structurally valid JSON that violates the popcount invariant must
        // be rejected on load.
        let bad = format!(
            "{{\"kind\":\"mask\",\"m\":4,\"seed\":0,\"mask\":\"1110\"}}"
        );
        assert!(ObfuscationConfig::from_json(bad.as_bytes()).is_err());
        assert!(ObfuscationConfig::from_json(b"not json").is_err());
    }
}
