//! Additive-strength models of bistable-ring PUF families.
//!
//! A ring instance is a list of per-stage gate strength differences. A BR
//! ring's settled state is the sign of `sum_i (alpha_i + C_i * beta_i)` where
//! `C_i` is the challenge bit mapped to {-1, +1}; the twisted variant drops
//! the constant term and flips stage parity instead of gates. XOR instances
//! evaluate k rings on the same challenge and combine the bits.
//!
//! Strengths are standard-normal draws quantized to a dyadic grid (2^-26) so
//! that every derived quantity (alpha, beta, weights, raw sums) is exact in
//! f64 arithmetic: sums of a few hundred grid values stay far below 2^53.

use crate::bits::Challenge;
use crate::error::{Error, Result};
use crate::seed::{self, Prng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Strength grid: 2^26 steps per unit.
const QUANT: f64 = 67_108_864.0;

fn quantize(x: f64) -> f64 {
    (x * QUANT).round() / QUANT
}

fn stage_sign(i: usize) -> f64 {
    if i % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Pull strength differences of one stage's top and bottom gates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageStrengths {
    pub t: f64,
    pub b: f64,
}

impl StageStrengths {
    pub fn new(t: f64, b: f64) -> Result<Self> {
        if !t.is_finite() || !b.is_finite() {
            return Err(Error::invalid("stage strengths must be finite"));
        }
        Ok(StageStrengths { t, b })
    }
}

/// Outcome of one ring evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalOutcome {
    Converged(bool),
    NonConverged,
}

impl EvalOutcome {
    pub fn converged_bit(self) -> Option<bool> {
        match self {
            EvalOutcome::Converged(b) => Some(b),
            EvalOutcome::NonConverged => None,
        }
    }

    pub fn is_converged(self) -> bool {
        matches!(self, EvalOutcome::Converged(_))
    }
}

/// Per-evaluation Gaussian perturbation of the raw sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub rng_seed: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, rng_seed: u64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::invalid(format!(
                "noise sigma must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(NoiseModel { sigma, rng_seed })
    }

    pub fn noiseless() -> Self {
        NoiseModel {
            sigma: 0.0,
            rng_seed: 0,
        }
    }

    /// Independent stream for one challenge; bulk evaluation partitions the
    /// PRNG by challenge index so parallel collection stays deterministic.
    pub fn stream(&self, challenge_index: u64) -> Prng {
        seed::rng_from_seed(seed::derive(self.rng_seed, challenge_index))
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !theta.is_finite() || theta < 0.0 {
        return Err(Error::invalid(format!(
            "convergence threshold must be finite and >= 0, got {theta}"
        )));
    }
    Ok(())
}

/// Sign-of-sum with a dead zone: |S| below theta (or S exactly zero) does
/// not settle.
fn threshold_sign(s: f64, theta: f64) -> EvalOutcome {
    if s.abs() < theta || s == 0.0 {
        EvalOutcome::NonConverged
    } else {
        EvalOutcome::Converged(s > 0.0)
    }
}

fn perturb(s: f64, sigma: f64, rng: &mut Prng) -> f64 {
    if sigma == 0.0 {
        s
    } else {
        let z: f64 = StandardNormal.sample(rng);
        s + sigma * z
    }
}

fn validate_stage_count(m: usize) -> Result<()> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::invalid(format!(
            "stage count must be even and >= 2, got {m}"
        )));
    }
    Ok(())
}

fn draw_stages(m: usize, seed_value: u64) -> Vec<StageStrengths> {
    let mut rng = seed::rng_from_seed(seed_value);
    (0..m)
        .map(|_| {
            let t: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            StageStrengths {
                t: quantize(t),
                b: quantize(b),
            }
        })
        .collect()
}

/// A bistable-ring instance under the additive strength model.
#[derive(Debug, Clone, PartialEq)]
pub struct BrPufInstance {
    stages: Vec<StageStrengths>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    alpha_sum: f64,
    seed: u64,
}

impl BrPufInstance {
    pub fn new(m: usize, seed_value: u64) -> Result<Self> {
        validate_stage_count(m)?;
        Self::from_stages_seeded(draw_stages(m, seed_value), seed_value)
    }

    pub fn from_stages(stages: Vec<StageStrengths>) -> Result<Self> {
        Self::from_stages_seeded(stages, 0)
    }

    fn from_stages_seeded(stages: Vec<StageStrengths>, seed: u64) -> Result<Self> {
        validate_stage_count(stages.len())?;
        for s in &stages {
            if !s.t.is_finite() || !s.b.is_finite() {
                return Err(Error::invalid("stage strengths must be finite"));
            }
        }
        let alpha: Vec<f64> = stages
            .iter()
            .enumerate()
            .map(|(i, s)| stage_sign(i) * ((s.t + s.b) / 2.0))
            .collect();
        let beta: Vec<f64> = stages
            .iter()
            .enumerate()
            .map(|(i, s)| stage_sign(i) * ((s.t - s.b) / 2.0))
            .collect();
        let alpha_sum = alpha.iter().sum();
        Ok(BrPufInstance {
            stages,
            alpha,
            beta,
            alpha_sum,
            seed,
        })
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[StageStrengths] {
        &self.stages
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_challenge(&self, c: &Challenge) -> Result<()> {
        if c.len() != self.stages.len() {
            return Err(Error::DimensionMismatch {
                expected: self.stages.len(),
                got: c.len(),
            });
        }
        Ok(())
    }

    /// Raw settling sum `sum_i (alpha_i + C_i beta_i)` without noise.
    pub fn raw_sum(&self, c: &Challenge) -> Result<f64> {
        self.check_challenge(c)?;
        let mut s = self.alpha_sum;
        for (i, beta) in self.beta.iter().enumerate() {
            if c.get(i) {
                s += beta;
            } else {
                s -= beta;
            }
        }
        Ok(s)
    }

    /// Challenge-independent contribution (the term a learner can absorb
    /// into its bias).
    pub fn alpha_sum(&self) -> f64 {
        self.alpha_sum
    }

    /// Beta-only sum, exposed for the constant-offset property.
    pub fn beta_only_sum(&self, c: &Challenge) -> Result<f64> {
        Ok(self.raw_sum(c)? - self.alpha_sum)
    }

    pub fn evaluate(
        &self,
        c: &Challenge,
        theta: f64,
        sigma: f64,
        rng: &mut Prng,
    ) -> Result<EvalOutcome> {
        check_theta(theta)?;
        let s = self.raw_sum(c)?;
        Ok(threshold_sign(perturb(s, sigma, rng), theta))
    }

    pub fn eval_noiseless(&self, c: &Challenge, theta: f64) -> Result<EvalOutcome> {
        check_theta(theta)?;
        Ok(threshold_sign(self.raw_sum(c)?, theta))
    }
}

/// Twisted variant: every gate stays in the ring, the challenge selects each
/// stage's parity, so the settling sum has no constant term.
#[derive(Debug, Clone, PartialEq)]
pub struct TbrPufInstance {
    stages: Vec<StageStrengths>,
    weights: Vec<f64>,
    seed: u64,
}

impl TbrPufInstance {
    pub fn new(m: usize, seed_value: u64) -> Result<Self> {
        validate_stage_count(m)?;
        Self::from_stages_seeded(draw_stages(m, seed_value), seed_value)
    }

    pub fn from_stages(stages: Vec<StageStrengths>) -> Result<Self> {
        Self::from_stages_seeded(stages, 0)
    }

    fn from_stages_seeded(stages: Vec<StageStrengths>, seed: u64) -> Result<Self> {
        validate_stage_count(stages.len())?;
        for s in &stages {
            if !s.t.is_finite() || !s.b.is_finite() {
                return Err(Error::invalid("stage strengths must be finite"));
            }
        }
        let weights: Vec<f64> = stages
            .iter()
            .enumerate()
            .map(|(i, s)| stage_sign(i) * (s.t - s.b))
            .collect();
        Ok(TbrPufInstance {
            stages,
            weights,
            seed,
        })
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[StageStrengths] {
        &self.stages
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn raw_sum(&self, c: &Challenge) -> Result<f64> {
        if c.len() != self.stages.len() {
            return Err(Error::DimensionMismatch {
                expected: self.stages.len(),
                got: c.len(),
            });
        }
        let mut s = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            if c.get(i) {
                s += w;
            } else {
                s -= w;
            }
        }
        Ok(s)
    }

    pub fn evaluate(
        &self,
        c: &Challenge,
        theta: f64,
        sigma: f64,
        rng: &mut Prng,
    ) -> Result<EvalOutcome> {
        check_theta(theta)?;
        let s = self.raw_sum(c)?;
        Ok(threshold_sign(perturb(s, sigma, rng), theta))
    }

    pub fn eval_noiseless(&self, c: &Challenge, theta: f64) -> Result<EvalOutcome> {
        check_theta(theta)?;
        Ok(threshold_sign(self.raw_sum(c)?, theta))
    }
}

/// Which ring family an XOR instance aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum XorKind {
    XorBr,
    XorTbr,
}

#[derive(Debug, Clone, PartialEq)]
enum Constituents {
    Br(Vec<BrPufInstance>),
    Tbr(Vec<TbrPufInstance>),
}

/// k rings fed the same challenge; their settled bits are XORed. A single
/// BR or TBR PUF is the k = 1 case.
#[derive(Debug, Clone, PartialEq)]
pub struct XorPufInstance {
    constituents: Constituents,
    m: usize,
}

impl XorPufInstance {
    /// Builds k BR constituents with seeds derived from `seed_value`.
    pub fn new_br(m: usize, k: usize, seed_value: u64) -> Result<Self> {
        let rings = (0..k)
            .map(|j| BrPufInstance::new(m, seed::derive_labeled(seed_value, "xor-br", j as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_br(rings)
    }

    pub fn new_tbr(m: usize, k: usize, seed_value: u64) -> Result<Self> {
        let rings = (0..k)
            .map(|j| TbrPufInstance::new(m, seed::derive_labeled(seed_value, "xor-tbr", j as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_tbr(rings)
    }

    pub fn from_br(rings: Vec<BrPufInstance>) -> Result<Self> {
        let m = Self::common_stage_count(rings.iter().map(|r| r.stage_count()))?;
        Ok(XorPufInstance {
            constituents: Constituents::Br(rings),
            m,
        })
    }

    pub fn from_tbr(rings: Vec<TbrPufInstance>) -> Result<Self> {
        let m = Self::common_stage_count(rings.iter().map(|r| r.stage_count()))?;
        Ok(XorPufInstance {
            constituents: Constituents::Tbr(rings),
            m,
        })
    }

    fn common_stage_count(mut counts: impl Iterator<Item = usize>) -> Result<usize> {
        let first = counts
            .next()
            .ok_or_else(|| Error::invalid("XOR instance needs at least one constituent"))?;
        for c in counts {
            if c != first {
                return Err(Error::invalid(format!(
                    "constituent stage counts differ: {first} vs {c}"
                )));
            }
        }
        Ok(first)
    }

    pub fn kind(&self) -> XorKind {
        match self.constituents {
            Constituents::Br(_) => XorKind::XorBr,
            Constituents::Tbr(_) => XorKind::XorTbr,
        }
    }

    pub fn k(&self) -> usize {
        match &self.constituents {
            Constituents::Br(v) => v.len(),
            Constituents::Tbr(v) => v.len(),
        }
    }

    pub fn stage_count(&self) -> usize {
        self.m
    }

    fn check_challenge(&self, c: &Challenge) -> Result<()> {
        if c.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: c.len(),
            });
        }
        Ok(())
    }

    /// Raw settling sums of every constituent for one challenge.
    pub fn raw_sums(&self, c: &Challenge) -> Result<Vec<f64>> {
        self.check_challenge(c)?;
        match &self.constituents {
            Constituents::Br(v) => v.iter().map(|r| r.raw_sum(c)).collect(),
            Constituents::Tbr(v) => v.iter().map(|r| r.raw_sum(c)).collect(),
        }
    }

    /// Smallest constituent margin; the challenge converges at threshold
    /// theta iff this is >= theta (and no sum is exactly zero).
    pub fn min_margin(&self, c: &Challenge) -> Result<f64> {
        Ok(self
            .raw_sums(c)?
            .iter()
            .fold(f64::INFINITY, |acc, s| acc.min(s.abs())))
    }

    /// Evaluates every constituent (each consuming one noise draw when sigma
    /// is nonzero), XORing the settled bits. Any non-settled ring makes the
    /// whole evaluation non-converged.
    pub fn evaluate(
        &self,
        c: &Challenge,
        theta: f64,
        sigma: f64,
        rng: &mut Prng,
    ) -> Result<EvalOutcome> {
        check_theta(theta)?;
        let sums = self.raw_sums(c)?;
        let mut acc = false;
        let mut all_converged = true;
        for s in sums {
            match threshold_sign(perturb(s, sigma, rng), theta) {
                EvalOutcome::Converged(bit) => acc ^= bit,
                EvalOutcome::NonConverged => all_converged = false,
            }
        }
        if all_converged {
            Ok(EvalOutcome::Converged(acc))
        } else {
            Ok(EvalOutcome::NonConverged)
        }
    }

    pub fn eval_noiseless(&self, c: &Challenge, theta: f64) -> Result<EvalOutcome> {
        check_theta(theta)?;
        let sums = self.raw_sums(c)?;
        let mut acc = false;
        for s in sums {
            match threshold_sign(s, theta) {
                EvalOutcome::Converged(bit) => acc ^= bit,
                EvalOutcome::NonConverged => return Ok(EvalOutcome::NonConverged),
            }
        }
        Ok(EvalOutcome::Converged(acc))
    }
}

/// Finds the threshold at which the noiseless all-constituent convergence
/// rate on `sample` crosses `target_rate`.
///
/// The rate is monotone nonincreasing in theta, so bisection (to relative
/// precision 1e-6) brackets the crossing; the returned theta is the smallest
/// bracketed value whose sample rate does not exceed the target. A target of
/// 1.0 returns 0 whenever every sample margin is nonzero.
pub fn calibrate_threshold(
    puf: &XorPufInstance,
    target_rate: f64,
    sample: &[Challenge],
) -> Result<f64> {
    if !(target_rate > 0.0 && target_rate <= 1.0) {
        return Err(Error::invalid(format!(
            "target convergence rate must be in (0, 1], got {target_rate}"
        )));
    }
    if sample.is_empty() {
        return Err(Error::invalid("calibration sample must be nonempty"));
    }
    let n = sample.len() as f64;
    let mut margins: Vec<f64> = Vec::with_capacity(sample.len());
    for c in sample {
        let q = puf.min_margin(c)?;
        if q > 0.0 {
            margins.push(q);
        }
    }
    margins.sort_unstable_by(|a, b| a.partial_cmp(b).expect("margins are finite"));
    let rate = |theta: f64| -> f64 {
        // margins >= theta, over the full sample size
        let idx = margins.partition_point(|&q| q < theta);
        (margins.len() - idx) as f64 / n
    };
    if rate(0.0) <= target_rate {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = margins.last().copied().unwrap_or(0.0) * (1.0 + 1e-9) + f64::MIN_POSITIVE;
    debug_assert!(rate(hi) <= target_rate);
    while hi - lo > 1e-6 * hi.max(1e-12) {
        let mid = 0.5 * (lo + hi);
        if rate(mid) > target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Measures the Eq.-4-style noise rate of one instance at a given sigma:
/// challenges whose every iteration settles are majority-voted and the
/// disagreeing evaluations counted.
pub fn measure_noise_rate(
    puf: &XorPufInstance,
    theta: f64,
    noise: &NoiseModel,
    sample: &[Challenge],
    iterations: usize,
) -> Result<f64> {
    if iterations == 0 || iterations % 2 == 0 {
        return Err(Error::invalid(format!(
            "iteration count must be odd, got {iterations}"
        )));
    }
    let mut kept = 0usize;
    let mut wrong = 0usize;
    for (idx, c) in sample.iter().enumerate() {
        let mut rng = noise.stream(idx as u64);
        let mut bits = Vec::with_capacity(iterations);
        let mut ok = true;
        for _ in 0..iterations {
            match puf.evaluate(c, theta, noise.sigma, &mut rng)? {
                EvalOutcome::Converged(b) => bits.push(b),
                EvalOutcome::NonConverged => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let ones = bits.iter().filter(|&&b| b).count();
        let majority = ones * 2 > iterations;
        kept += 1;
        wrong += bits.iter().filter(|&&b| b != majority).count();
    }
    if kept == 0 {
        return Ok(0.0);
    }
    Ok(wrong as f64 / (iterations * kept) as f64)
}

/// Bisects sigma until the measured noise rate lands on `target_noise`.
/// Uses a fixed probe stream per call, so the measured curve is a
/// deterministic, effectively monotone function of sigma.
pub fn calibrate_noise_sigma(
    puf: &XorPufInstance,
    theta: f64,
    sample: &[Challenge],
    target_noise: f64,
    iterations: usize,
    probe_seed: u64,
) -> Result<f64> {
    if !(target_noise > 0.0 && target_noise < 0.5) {
        return Err(Error::invalid(format!(
            "target noise must be in (0, 0.5), got {target_noise}"
        )));
    }
    if sample.is_empty() {
        return Err(Error::invalid("calibration sample must be nonempty"));
    }
    let measure = |sigma: f64| -> Result<f64> {
        let noise = NoiseModel {
            sigma,
            rng_seed: probe_seed,
        };
        measure_noise_rate(puf, theta, &noise, sample, iterations)
    };
    // Typical margin sets the search scale.
    let mut sum = 0.0;
    for c in sample.iter().take(512) {
        sum += puf.min_margin(c)?;
    }
    let scale = (sum / sample.len().min(512) as f64).max(f64::MIN_POSITIVE);
    let mut hi = scale * 0.5;
    let mut expansions = 0;
    while measure(hi)? < target_noise {
        hi *= 2.0;
        expansions += 1;
        if expansions > 12 {
            return Err(Error::Numerical(
                "noise target unreachable: rate stays below target as sigma grows".into(),
            ));
        }
    }
    let mut lo = 0.0;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if measure(mid)? < target_noise {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-4 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
