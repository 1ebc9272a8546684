//! CRP collection, persistence, and splitting.
//!
//! Canonical on-disk form is a CSV: `# key=value` header lines followed by
//! one `<m-char bit string>,<0|1>` record per line (LF). A bit-packed binary
//! form (magic `CRPD`) round-trips with it.

use crate::bits::Challenge;
use crate::error::{Error, Result};
use crate::obfuscation::ObfuscationConfig;
use crate::puf::{EvalOutcome, NoiseModel, XorKind, XorPufInstance};
use crate::seed;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;
const BINARY_MAGIC: &[u8; 4] = b"CRPD";
const BINARY_VERSION: u8 = 1;
/// Sanity cap used when decoding untrusted headers.
const MAX_STAGES: usize = 1 << 16;

/// PUF family of a dataset; single rings are the k = 1 XOR case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PufKind {
    Br,
    Tbr,
    XorBr,
    XorTbr,
}

impl PufKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PufKind::Br => "br",
            PufKind::Tbr => "tbr",
            PufKind::XorBr => "xor-br",
            PufKind::XorTbr => "xor-tbr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "br" => Ok(PufKind::Br),
            "tbr" => Ok(PufKind::Tbr),
            "xor-br" => Ok(PufKind::XorBr),
            "xor-tbr" => Ok(PufKind::XorTbr),
            _ => Err(Error::Format(format!("unknown puf kind {s:?}"))),
        }
    }

    pub fn is_twisted(self) -> bool {
        matches!(self, PufKind::Tbr | PufKind::XorTbr)
    }

    pub fn of_instance(puf: &XorPufInstance) -> Self {
        match (puf.kind(), puf.k()) {
            (XorKind::XorBr, 1) => PufKind::Br,
            (XorKind::XorTbr, 1) => PufKind::Tbr,
            (XorKind::XorBr, _) => PufKind::XorBr,
            (XorKind::XorTbr, _) => PufKind::XorTbr,
        }
    }
}

impl fmt::Display for PufKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Compact pointer to the obfuscation config that produced a dataset; the
/// config regenerates deterministically from `(kind, m, seed)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ObfuscationRef {
    Mask { seed: u64 },
    Shuffle { seed: u64 },
}

impl ObfuscationRef {
    pub fn of_config(cfg: &ObfuscationConfig) -> Self {
        match cfg {
            ObfuscationConfig::Mask(m) => ObfuscationRef::Mask { seed: m.seed },
            ObfuscationConfig::Shuffle(s) => ObfuscationRef::Shuffle { seed: s.seed },
        }
    }

    fn header_value(self) -> String {
        match self {
            ObfuscationRef::Mask { seed } => format!("mask:{seed}"),
            ObfuscationRef::Shuffle { seed } => format!("shuffle:{seed}"),
        }
    }

    fn parse_header(s: &str) -> Result<Option<Self>> {
        if s == "none" {
            return Ok(None);
        }
        let (kind, seed) = s
            .split_once(':')
            .ok_or_else(|| Error::Format(format!("bad obfuscation value {s:?}")))?;
        let seed: u64 = seed
            .parse()
            .map_err(|_| Error::Format(format!("bad obfuscation seed {seed:?}")))?;
        match kind {
            "mask" => Ok(Some(ObfuscationRef::Mask { seed })),
            "shuffle" => Ok(Some(ObfuscationRef::Shuffle { seed })),
            _ => Err(Error::Format(format!("unknown obfuscation kind {kind:?}"))),
        }
    }
}

/// Provenance and protocol parameters of one collected corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub puf_kind: PufKind,
    pub m: usize,
    pub k: usize,
    pub chip_seed: u64,
    pub obfuscation: Option<ObfuscationRef>,
    pub lfsr_taps: u64,
    pub lfsr_seed: u64,
    pub iterations: usize,
    pub theta: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrpRecord {
    pub challenge: Challenge,
    pub response: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrpDataset {
    pub records: Vec<CrpRecord>,
    pub meta: DatasetMeta,
}

impl CrpDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn responses(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.response).collect()
    }

    /// ±1-encoded feature matrix (bit 0 maps to -1) and 0/1 labels.
    pub fn encode_pm1(&self) -> (Array2<f64>, Array1<f64>) {
        let n = self.records.len();
        let m = self.meta.m;
        let mut x = Array2::zeros((n, m));
        let mut y = Array1::zeros(n);
        for (row, rec) in self.records.iter().enumerate() {
            for i in 0..m {
                x[[row, i]] = if rec.challenge.get(i) { 1.0 } else { -1.0 };
            }
            y[row] = rec.response as u8 as f64;
        }
        (x, y)
    }
}

/// Evaluates each challenge `iterations` times (after the optional
/// obfuscation transform), discards any that fail to settle, and stores the
/// majority-vote bit against the *original* challenge.
pub fn collect_crps(
    puf: &XorPufInstance,
    obfuscation: Option<&ObfuscationConfig>,
    challenges: &[Challenge],
    iterations: usize,
    noise: &NoiseModel,
    theta: f64,
) -> Result<CrpDataset> {
    collect_crps_with_provenance(
        puf,
        obfuscation,
        challenges,
        iterations,
        noise,
        theta,
        0,
        crate::lfsr::DEFAULT_TAPS,
        0,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn collect_crps_with_provenance(
    puf: &XorPufInstance,
    obfuscation: Option<&ObfuscationConfig>,
    challenges: &[Challenge],
    iterations: usize,
    noise: &NoiseModel,
    theta: f64,
    chip_seed: u64,
    lfsr_taps: u64,
    lfsr_seed: u64,
) -> Result<CrpDataset> {
    if iterations == 0 || iterations % 2 == 0 {
        return Err(Error::invalid(format!(
            "iteration count must be odd, got {iterations}"
        )));
    }
    if let Some(obf) = obfuscation {
        if obf.m() != puf.stage_count() {
            return Err(Error::DimensionMismatch {
                expected: puf.stage_count(),
                got: obf.m(),
            });
        }
    }
    let mut seen = HashSet::with_capacity(challenges.len());
    for c in challenges {
        if !seen.insert(c) {
            return Err(Error::invalid("duplicate challenge in input stream"));
        }
    }
    let rows: Vec<Option<CrpRecord>> = challenges
        .par_iter()
        .enumerate()
        .map(|(idx, original)| -> Result<Option<CrpRecord>> {
            let effective = match obfuscation {
                Some(obf) => obf.apply(original)?,
                None => original.clone(),
            };
            let mut rng = noise.stream(idx as u64);
            let mut ones = 0usize;
            for _ in 0..iterations {
                match puf.evaluate(&effective, theta, noise.sigma, &mut rng)? {
                    EvalOutcome::Converged(true) => ones += 1,
                    EvalOutcome::Converged(false) => {}
                    EvalOutcome::NonConverged => return Ok(None),
                }
            }
            Ok(Some(CrpRecord {
                challenge: original.clone(),
                response: ones * 2 > iterations,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<CrpRecord> = rows.into_iter().flatten().collect();
    Ok(CrpDataset {
        records,
        meta: DatasetMeta {
            puf_kind: PufKind::of_instance(puf),
            m: puf.stage_count(),
            k: puf.k(),
            chip_seed,
            obfuscation: obfuscation.map(ObfuscationRef::of_config),
            lfsr_taps,
            lfsr_seed,
            iterations,
            theta,
            sigma: noise.sigma,
        },
    })
}

/// Disjoint uniform train/test subsets, deterministic per seed.
pub fn split_dataset(
    ds: &CrpDataset,
    train_size: usize,
    test_size: usize,
    split_seed: u64,
) -> Result<(CrpDataset, CrpDataset)> {
    let total = train_size
        .checked_add(test_size)
        .ok_or_else(|| Error::Size("split sizes overflow".into()))?;
    if total > ds.records.len() {
        return Err(Error::Size(format!(
            "requested {train_size}+{test_size} records from a dataset of {}",
            ds.records.len()
        )));
    }
    let mut indices: Vec<usize> = (0..ds.records.len()).collect();
    let mut rng = seed::rng_from_seed(split_seed);
    indices.shuffle(&mut rng);
    let pick = |range: std::ops::Range<usize>| CrpDataset {
        records: indices[range]
            .iter()
            .map(|&i| ds.records[i].clone())
            .collect(),
        meta: ds.meta.clone(),
    };
    Ok((pick(0..train_size), pick(train_size..total)))
}

// ---------------------------------------------------------------------------
// CSV form
// ---------------------------------------------------------------------------

fn header_lines(meta: &DatasetMeta) -> String {
    let obf = meta
        .obfuscation
        .map(|o| o.header_value())
        .unwrap_or_else(|| "none".to_string());
    format!(
        "# schema_version={}\n# puf_kind={}\n# m={}\n# k={}\n# chip_seed={}\n\
         # obfuscation={}\n# lfsr_taps=0x{:016x}\n# lfsr_seed={}\n# iterations={}\n\
         # theta={}\n# sigma={}\n",
        SCHEMA_VERSION,
        meta.puf_kind,
        meta.m,
        meta.k,
        meta.chip_seed,
        obf,
        meta.lfsr_taps,
        meta.lfsr_seed,
        meta.iterations,
        meta.theta,
        meta.sigma
    )
}

pub fn write_dataset_csv<W: Write>(ds: &CrpDataset, mut w: W) -> Result<()> {
    w.write_all(header_lines(&ds.meta).as_bytes())?;
    let mut buf = String::with_capacity(ds.meta.m + 3);
    for rec in &ds.records {
        buf.clear();
        for bit in rec.challenge.iter() {
            buf.push(if bit { '1' } else { '0' });
        }
        buf.push(',');
        buf.push(if rec.response { '1' } else { '0' });
        buf.push('\n');
        w.write_all(buf.as_bytes())?;
    }
    Ok(())
}

pub fn write_dataset(ds: &CrpDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_dataset_csv(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

struct HeaderBuilder {
    schema_version: Option<u32>,
    puf_kind: Option<PufKind>,
    m: Option<usize>,
    k: Option<usize>,
    chip_seed: Option<u64>,
    obfuscation: Option<Option<ObfuscationRef>>,
    lfsr_taps: Option<u64>,
    lfsr_seed: Option<u64>,
    iterations: Option<usize>,
    theta: Option<f64>,
    sigma: Option<f64>,
}

impl HeaderBuilder {
    fn new() -> Self {
        HeaderBuilder {
            schema_version: None,
            puf_kind: None,
            m: None,
            k: None,
            chip_seed: None,
            obfuscation: None,
            lfsr_taps: None,
            lfsr_seed: None,
            iterations: None,
            theta: None,
            sigma: None,
        }
    }

    fn set(&mut self, line_no: usize, key: &str, value: &str) -> Result<()> {
        let fail = |what: &str| Error::parse(line_no, format!("bad {what} value {value:?}"));
        match key {
            "schema_version" => {
                let v: u32 = value.parse().map_err(|_| fail("schema_version"))?;
                if v != SCHEMA_VERSION {
                    return Err(Error::parse(
                        line_no,
                        format!("unsupported schema version {v}"),
                    ));
                }
                self.schema_version = Some(v);
            }
            "puf_kind" => {
                self.puf_kind =
                    Some(PufKind::parse(value).map_err(|e| Error::parse(line_no, e.to_string()))?)
            }
            "m" => {
                let m: usize = value.parse().map_err(|_| fail("m"))?;
                if m == 0 || m > MAX_STAGES {
                    return Err(Error::parse(line_no, format!("stage count {m} out of range")));
                }
                self.m = Some(m);
            }
            "k" => self.k = Some(value.parse().map_err(|_| fail("k"))?),
            "chip_seed" => self.chip_seed = Some(value.parse().map_err(|_| fail("chip_seed"))?),
            "obfuscation" => {
                self.obfuscation = Some(
                    ObfuscationRef::parse_header(value)
                        .map_err(|e| Error::parse(line_no, e.to_string()))?,
                )
            }
            "lfsr_taps" => {
                let hex = value
                    .strip_prefix("0x")
                    .ok_or_else(|| fail("lfsr_taps (missing 0x)"))?;
                self.lfsr_taps = Some(u64::from_str_radix(hex, 16).map_err(|_| fail("lfsr_taps"))?);
            }
            "lfsr_seed" => self.lfsr_seed = Some(value.parse().map_err(|_| fail("lfsr_seed"))?),
            "iterations" => self.iterations = Some(value.parse().map_err(|_| fail("iterations"))?),
            "theta" => {
                let v: f64 = value.parse().map_err(|_| fail("theta"))?;
                if !v.is_finite() || v < 0.0 {
                    return Err(fail("theta"));
                }
                self.theta = Some(v);
            }
            "sigma" => {
                let v: f64 = value.parse().map_err(|_| fail("sigma"))?;
                if !v.is_finite() || v < 0.0 {
                    return Err(fail("sigma"));
                }
                self.sigma = Some(v);
            }
            _ => return Err(Error::parse(line_no, format!("unknown header key {key:?}"))),
        }
        Ok(())
    }

    fn finish(self, line_no: usize) -> Result<DatasetMeta> {
        let missing = |what: &str| Error::parse(line_no, format!("missing header key {what}"));
        Ok(DatasetMeta {
            puf_kind: self.puf_kind.ok_or_else(|| missing("puf_kind"))?,
            m: self.m.ok_or_else(|| missing("m"))?,
            k: self.k.ok_or_else(|| missing("k"))?,
            chip_seed: self.chip_seed.ok_or_else(|| missing("chip_seed"))?,
            obfuscation: self.obfuscation.ok_or_else(|| missing("obfuscation"))?,
            lfsr_taps: self.lfsr_taps.ok_or_else(|| missing("lfsr_taps"))?,
            lfsr_seed: self.lfsr_seed.ok_or_else(|| missing("lfsr_seed"))?,
            iterations: self.iterations.ok_or_else(|| missing("iterations"))?,
            theta: self.theta.ok_or_else(|| missing("theta"))?,
            sigma: self.sigma.ok_or_else(|| missing("sigma"))?,
        })
        .and_then(|meta| {
            if self.schema_version.is_none() {
                Err(missing("schema_version"))
            } else {
                Ok(meta)
            }
        })
    }
}

pub fn read_dataset_csv<R: Read>(r: R) -> Result<CrpDataset> {
    let reader = BufReader::new(r);
    let mut header = HeaderBuilder::new();
    let mut meta: Option<DatasetMeta> = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if meta.is_some() {
                return Err(Error::parse(line_no, "header line after records"));
            }
            let rest = rest.trim();
            let (key, value) = rest
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, "header line is not key=value"))?;
            header.set(line_no, key.trim(), value.trim())?;
            continue;
        }
        let m = match &meta {
            Some(mt) => mt.m,
            None => {
                let built = std::mem::replace(&mut header, HeaderBuilder::new()).finish(line_no)?;
                let m = built.m;
                meta = Some(built);
                m
            }
        };
        let (bits, resp) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(line_no, "record is not <bits>,<response>"))?;
        if bits.len() != m {
            return Err(Error::parse(
                line_no,
                format!("challenge has {} bits, header says m={m}", bits.len()),
            ));
        }
        let challenge = Challenge::parse_binary(bits)
            .map_err(|e| Error::parse(line_no, e.to_string()))?;
        let response = match resp {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(
                    line_no,
                    format!("response must be 0 or 1, got {other:?}"),
                ))
            }
        };
        records.push(CrpRecord {
            challenge,
            response,
        });
    }
    let meta = match meta {
        Some(m) => m,
        // Header-only file: still requires a complete header.
        None => header.finish(0)?,
    };
    Ok(CrpDataset { records, meta })
}

pub fn read_dataset(path: &Path) -> Result<CrpDataset> {
    read_dataset_csv(std::fs::File::open(path)?)
}

// ---------------------------------------------------------------------------
// Packed binary form
// ---------------------------------------------------------------------------

pub fn write_dataset_binary<W: Write>(ds: &CrpDataset, mut w: W) -> Result<()> {
    let meta_json = serde_json::to_vec(&ds.meta)?;
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&[BINARY_VERSION])?;
    w.write_all(&(meta_json.len() as u32).to_le_bytes())?;
    w.write_all(&meta_json)?;
    w.write_all(&(ds.records.len() as u64).to_le_bytes())?;
    for rec in &ds.records {
        w.write_all(&rec.challenge.to_le_bytes())?;
    }
    let mut resp = vec![0u8; ds.records.len().div_ceil(8)];
    for (i, rec) in ds.records.iter().enumerate() {
        if rec.response {
            resp[i / 8] |= 1 << (i % 8);
        }
    }
    w.write_all(&resp)?;
    Ok(())
}

pub fn read_dataset_binary(bytes: &[u8]) -> Result<CrpDataset> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated binary dataset reading {what}")))?;
        let out = &bytes[*pos..end];
        *pos = end;
        Ok(out)
    };
    if take(&mut pos, 4, "magic")? != BINARY_MAGIC {
        return Err(Error::Format("bad magic, expected CRPD".into()));
    }
    let version = take(&mut pos, 1, "version")?[0];
    if version != BINARY_VERSION {
        return Err(Error::Format(format!("unsupported binary version {version}")));
    }
    let meta_len = u32::from_le_bytes(take(&mut pos, 4, "meta length")?.try_into().unwrap()) as usize;
    if meta_len > bytes.len() {
        return Err(Error::Format("meta length exceeds file size".into()));
    }
    let meta: DatasetMeta = serde_json::from_slice(take(&mut pos, meta_len, "meta")?)?;
    if meta.m == 0 || meta.m > MAX_STAGES {
        return Err(Error::Format(format!("stage count {} out of range", meta.m)));
    }
    let n = u64::from_le_bytes(take(&mut pos, 8, "record count")?.try_into().unwrap());
    let n: usize = n
        .try_into()
        .map_err(|_| Error::Format("record count exceeds platform limits".into()))?;
    let challenge_bytes = meta.m.div_ceil(8);
    let need = n
        .checked_mul(challenge_bytes)
        .and_then(|c| c.checked_add(n.div_ceil(8)))
        .ok_or_else(|| Error::Format("record payload size overflows".into()))?;
    if bytes.len() - pos != need {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {need} for {n} records of m={}",
            bytes.len() - pos,
            meta.m
        )));
    }
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let raw = take(&mut pos, challenge_bytes, "challenge")?;
        records.push(CrpRecord {
            challenge: Challenge::from_le_bytes(raw, meta.m)?,
            response: false,
        });
    }
    let resp = take(&mut pos, n.div_ceil(8), "responses")?;
    for (i, rec) in records.iter_mut().enumerate() {
        rec.response = resp[i / 8] >> (i % 8) & 1 == 1;
    }
    if n % 8 != 0 {
        let last = resp[resp.len() - 1];
        if last >> (n % 8) != 0 {
            return Err(Error::Format("nonzero padding in response block".into()));
        }
    }
    Ok(CrpDataset { records, meta })
}

pub fn write_dataset_binary_file(ds: &CrpDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_dataset_binary(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset_binary_file(path: &Path) -> Result<CrpDataset> {
    read_dataset_binary(&std::fs::read(path)?)
}
