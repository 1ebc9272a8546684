//! PUF quality metrics: noise, bias, inter-chip distance, per-bit influence,
//! and convergence rate, plus a multi-chip characterization harness.
//!
//! All metrics are computed over converged, majority-voted responses only.

use crate::bits::Challenge;
use crate::dataset::PufKind;
use crate::error::{Error, Result};
use crate::lfsr::{lfsr_generate, GaloisLfsr};
use crate::puf::{
    calibrate_noise_sigma, calibrate_threshold, EvalOutcome, NoiseModel, XorPufInstance,
};
use crate::seed;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Eq.-4 noise: majority vote per challenge defines the right response; the
/// disagreeing evaluations are counted. Ideal 0.
pub fn noise_rate(raw_evals: &[Vec<bool>]) -> Result<f64> {
    if raw_evals.is_empty() {
        return Err(Error::invalid("noise rate needs at least one challenge"));
    }
    let iterations = raw_evals[0].len();
    if iterations == 0 || iterations % 2 == 0 {
        return Err(Error::invalid(format!(
            "iteration count must be odd, got {iterations}"
        )));
    }
    let mut wrong = 0usize;
    for (i, evals) in raw_evals.iter().enumerate() {
        if evals.len() != iterations {
            return Err(Error::invalid(format!(
                "challenge {i} has {} evaluations, expected {iterations}",
                evals.len()
            )));
        }
        let ones = evals.iter().filter(|&&b| b).count();
        let majority = ones * 2 > iterations;
        wrong += evals.iter().filter(|&&b| b != majority).count();
    }
    Ok(wrong as f64 / (iterations * raw_evals.len()) as f64)
}

/// Eq.-5 bias: fraction of '1' responses. Ideal 0.5.
pub fn bias(responses: &[bool]) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::invalid("bias needs at least one response"));
    }
    Ok(responses.iter().filter(|&&b| b).count() as f64 / responses.len() as f64)
}

/// Eq.-6 inter-chip normalized Hamming distance over aligned responses to
/// the same challenges. Ideal 0.5.
pub fn inter_chip_nhd(responses_a: &[bool], responses_b: &[bool]) -> Result<f64> {
    if responses_a.len() != responses_b.len() {
        return Err(Error::DimensionMismatch {
            expected: responses_a.len(),
            got: responses_b.len(),
        });
    }
    if responses_a.is_empty() {
        return Err(Error::invalid("NHD needs at least one response"));
    }
    let dissimilar = responses_a
        .iter()
        .zip(responses_b)
        .filter(|(a, b)| a != b)
        .count();
    Ok(dissimilar as f64 / responses_a.len() as f64)
}

/// Fraction of converged outcomes.
pub fn convergence_rate(outcomes: &[EvalOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::invalid("convergence rate needs at least one outcome"));
    }
    Ok(outcomes.iter().filter(|o| o.is_converged()).count() as f64 / outcomes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxInfluence {
    /// Raw Infl(i, v) of the most deviant entry.
    pub value: f64,
    /// |value - 0.5|, the security-relevant deviation.
    pub deviation: f64,
    pub bit: usize,
    pub bit_value: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceProfile {
    /// Row i holds [Infl(i,0), Infl(i,1)].
    pub table: Vec<[f64; 2]>,
    pub max: MaxInfluence,
}

/// Eqs. 7-8: per challenge bit and value, the fraction of '1' responses among
/// challenges carrying that value. Ideal 0.5 everywhere.
pub fn influence_profile(challenges: &[Challenge], responses: &[bool]) -> Result<InfluenceProfile> {
    if challenges.is_empty() {
        return Err(Error::invalid("influence profile needs data"));
    }
    if challenges.len() != responses.len() {
        return Err(Error::DimensionMismatch {
            expected: challenges.len(),
            got: responses.len(),
        });
    }
    let m = challenges[0].len();
    for c in challenges {
        if c.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: c.len(),
            });
        }
    }
    let mut count = vec![[0usize; 2]; m];
    let mut ones = vec![[0usize; 2]; m];
    for (c, &r) in challenges.iter().zip(responses) {
        for i in 0..m {
            let v = c.get(i) as usize;
            count[i][v] += 1;
            if r {
                ones[i][v] += 1;
            }
        }
    }
    let mut table = Vec::with_capacity(m);
    let mut max = MaxInfluence {
        value: 0.5,
        deviation: -1.0,
        bit: 0,
        bit_value: 0,
    };
    for i in 0..m {
        let mut row = [0.0; 2];
        for v in 0..2 {
            if count[i][v] == 0 {
                return Err(Error::UndefinedInfluence { bit: i });
            }
            row[v] = ones[i][v] as f64 / count[i][v] as f64;
            let deviation = (row[v] - 0.5).abs();
            if deviation > max.deviation {
                max = MaxInfluence {
                    value: row[v],
                    deviation,
                    bit: i,
                    bit_value: v as u8,
                };
            }
        }
        table.push(row);
    }
    Ok(InfluenceProfile { table, max })
}

/// Aggregate characteristics of one PUF family across simulated chips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub puf_kind: PufKind,
    pub m: usize,
    pub k: usize,
    pub theta: f64,
    pub sigma: f64,
    pub conv_target: f64,
    /// Averages over chips.
    pub noise: f64,
    pub bias: f64,
    pub convergence_rate: f64,
    pub bias_per_chip: Vec<f64>,
    /// "chip<i>-chip<j>" -> NHD over challenges converged on both.
    pub nhd: BTreeMap<String, f64>,
    /// Influence table of chip 1.
    pub influence: Vec<[f64; 2]>,
    pub max_influence: MaxInfluence,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text table with one row per characteristic.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "PUF: {} m={} k={} (theta={:.4}, sigma={:.4}, conv target {:.0}%)\n",
            self.puf_kind,
            self.m,
            self.k,
            self.theta,
            self.sigma,
            self.conv_target * 100.0
        ));
        out.push_str(&format!("Conv. Avg. (%)  {:6.2}\n", self.convergence_rate * 100.0));
        out.push_str(&format!("Noise Avg. (%)  {:6.2}\n", self.noise * 100.0));
        for (i, b) in self.bias_per_chip.iter().enumerate() {
            out.push_str(&format!("Bias Chip {} (%) {:6.2}\n", i + 1, b * 100.0));
        }
        let nhd_avg = if self.nhd.is_empty() {
            f64::NAN
        } else {
            self.nhd.values().sum::<f64>() / self.nhd.len() as f64
        };
        out.push_str(&format!("NHD Avg. (%)    {:6.2}\n", nhd_avg * 100.0));
        out.push_str(&format!(
            "Max Infl. (%)   {:6.2}  (bit {}, value {})\n",
            self.max_influence.value * 100.0,
            self.max_influence.bit,
            self.max_influence.bit_value
        ));
        out
    }
}

/// Characterization protocol: per chip, calibrate theta (and sigma unless
/// supplied), apply the shared challenge stream for `iterations` rounds, and
/// compute every Table-II-style metric over the converged majority responses.
pub struct CharacterizeOptions {
    pub kind: PufKind,
    pub m: usize,
    pub k: usize,
    pub chip_seeds: Vec<u64>,
    pub challenges: usize,
    pub iterations: usize,
    pub conv_target: f64,
    /// None -> calibrate sigma to `noise_target`.
    pub sigma: Option<f64>,
    pub noise_target: f64,
    pub master_seed: u64,
}

pub fn characterize(opts: &CharacterizeOptions) -> Result<MetricsReport> {
    if opts.chip_seeds.is_empty() {
        return Err(Error::invalid("characterization needs at least one chip"));
    }
    if opts.iterations % 2 == 0 {
        return Err(Error::invalid("iterations must be odd"));
    }
    let mut lfsr = GaloisLfsr::with_defaults(seed::derive_labeled(
        opts.master_seed,
        "characterize-lfsr",
        0,
    ))?;
    let challenges = lfsr_generate(&mut lfsr, opts.challenges, opts.m)?;
    let mut calib_lfsr = GaloisLfsr::with_defaults(seed::derive_labeled(
        opts.master_seed,
        "characterize-calib",
        0,
    ))?;
    let calib = lfsr_generate(&mut calib_lfsr, 10_000.min(opts.challenges), opts.m)?;

    let mut noise_sum = 0.0;
    let mut conv_sum = 0.0;
    let mut bias_per_chip = Vec::new();
    let mut theta_first = 0.0;
    let mut sigma_first = 0.0;
    // Converged majority response per chip, aligned with `challenges`.
    let mut votes: Vec<Vec<Option<bool>>> = Vec::new();
    let mut influence: Option<InfluenceProfile> = None;

    for (chip_idx, &chip_seed) in opts.chip_seeds.iter().enumerate() {
        let puf = build_instance(opts.kind, opts.m, opts.k, chip_seed)?;
        let theta = calibrate_threshold(&puf, opts.conv_target, &calib)?;
        let noise_seed = seed::derive_labeled(opts.master_seed, "characterize-noise", chip_idx as u64);
        let sigma = match opts.sigma {
            Some(s) => s,
            None => calibrate_noise_sigma(
                &puf,
                theta,
                &calib[..calib.len().min(4000)],
                opts.noise_target,
                opts.iterations,
                seed::derive_labeled(opts.master_seed, "characterize-sigma-probe", chip_idx as u64),
            )?,
        };
        if chip_idx == 0 {
            theta_first = theta;
            sigma_first = sigma;
        }
        let noise = NoiseModel {
            sigma,
            rng_seed: noise_seed,
        };

        let mut raw: Vec<Vec<bool>> = Vec::new();
        let mut chip_votes: Vec<Option<bool>> = Vec::with_capacity(challenges.len());
        let mut converged = 0usize;
        for (i, c) in challenges.iter().enumerate() {
            let mut rng = noise.stream(i as u64);
            let mut bits = Vec::with_capacity(opts.iterations);
            let mut ok = true;
            for _ in 0..opts.iterations {
                match puf.evaluate(c, theta, sigma, &mut rng)? {
                    EvalOutcome::Converged(b) => bits.push(b),
                    EvalOutcome::NonConverged => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                converged += 1;
                let ones = bits.iter().filter(|&&b| b).count();
                chip_votes.push(Some(ones * 2 > opts.iterations));
                raw.push(bits);
            } else {
                chip_votes.push(None);
            }
        }
        if raw.is_empty() {
            return Err(Error::Numerical(format!(
                "chip {chip_idx}: no challenge converged through all iterations"
            )));
        }
        noise_sum += noise_rate(&raw)?;
        conv_sum += converged as f64 / challenges.len() as f64;
        let responses: Vec<bool> = chip_votes.iter().flatten().copied().collect();
        bias_per_chip.push(bias(&responses)?);
        if chip_idx == 0 {
            let kept: Vec<Challenge> = challenges
                .iter()
                .zip(&chip_votes)
                .filter(|(_, v)| v.is_some())
                .map(|(c, _)| c.clone())
                .collect();
            influence = Some(influence_profile(&kept, &responses)?);
        }
        votes.push(chip_votes);
    }

    let mut nhd = BTreeMap::new();
    for i in 0..votes.len() {
        for j in i + 1..votes.len() {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for idx in 0..challenges.len() {
                if let (Some(x), Some(y)) = (votes[i][idx], votes[j][idx]) {
                    a.push(x);
                    b.push(y);
                }
            }
            if a.is_empty() {
                return Err(Error::Numerical(format!(
                    "chips {i} and {j} share no converged challenges"
                )));
            }
            nhd.insert(format!("chip{}-chip{}", i + 1, j + 1), inter_chip_nhd(&a, &b)?);
        }
    }

    let chips = opts.chip_seeds.len() as f64;
    let influence = influence.expect("at least one chip processed");
    Ok(MetricsReport {
        puf_kind: opts.kind,
        m: opts.m,
        k: opts.k,
        theta: theta_first,
        sigma: sigma_first,
        conv_target: opts.conv_target,
        noise: noise_sum / chips,
        bias: bias_per_chip.iter().sum::<f64>() / chips,
        convergence_rate: conv_sum / chips,
        bias_per_chip,
        nhd,
        influence: influence.table,
        max_influence: influence.max,
    })
}

/// Builds the simulated instance for a (kind, m, k, chip seed) tuple.
pub fn build_instance(kind: PufKind, m: usize, k: usize, chip_seed: u64) -> Result<XorPufInstance> {
    let k_eff = match kind {
        PufKind::Br | PufKind::Tbr => {
            if k != 1 {
                return Err(Error::invalid(format!(
                    "kind {kind} is a single ring, got k={k}"
                )));
            }
            1
        }
        _ => k,
    };
    if kind.is_twisted() {
        XorPufInstance::new_tbr(m, k_eff, chip_seed)
    } else {
        XorPufInstance::new_br(m, k_eff, chip_seed)
    }
}
