//! Line-oriented experiment configuration: `[section]` headers over
//! `key = value` pairs, `#` comment lines. Repeating an `[mlp]` section adds
//! another attacker. Exact keys are documented in the repository README.

use crate::dataset::PufKind;
use crate::error::{Error, Result};
use crate::lfsr::DEFAULT_TAPS;
use serde::{Deserialize, Serialize};

/// Which obfuscation front-end the experiment places before the PUF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObfuscationKind {
    Mask,
    Shuffle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PufSpec {
    pub kind: PufKind,
    pub m: usize,
    pub k: usize,
    pub chips: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSpec {
    /// Calibrate sigma so the measured noise rate hits `noise_target`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub train_sizes: Vec<usize>,
    pub test_size: usize,
    pub iterations: usize,
    pub sigma: SigmaSpec,
    pub noise_target: f64,
    /// None -> family default (0.80 for BR rings, 0.72 for TBR rings).
    pub conv_target: Option<f64>,
    pub lfsr_taps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layers: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub stop_window: usize,
    pub stop_digits: u32,
    pub checkpoint_every: usize,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            layers: 4,
            hidden: 256,
            learning_rate: 1e-4,
            dropout: 0.2,
            batch_size: 256,
            max_iterations: 1_000_000,
            stop_window: 5,
            stop_digits: 4,
            checkpoint_every: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmSpec {
    pub degree: u32,
    pub c_grid: Vec<f64>,
    pub cap: usize,
}

impl Default for SvmSpec {
    fn default() -> Self {
        SvmSpec {
            degree: 4,
            c_grid: vec![0.01, 0.1, 1.0, 10.0],
            cap: crate::ml::DEFAULT_SVM_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaSpec {
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub layers: Vec<usize>,
    pub hidden: Vec<usize>,
    pub full_layers: Vec<usize>,
    pub full_hidden: Vec<usize>,
    pub train_size: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            layers: vec![1, 4, 8],
            hidden: vec![64, 128, 256, 512],
            full_layers: vec![1, 4, 8, 12],
            full_hidden: vec![64, 128, 256, 512, 1024, 2048],
            train_size: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Table,
    Csv,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::invalid(format!(
                "unknown format {s:?}; expected json, table, or csv"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub dir: String,
    pub format: ReportFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub puf: PufSpec,
    pub obfuscation: Option<ObfuscationKind>,
    pub dataset: DatasetSpec,
    pub mlps: Vec<MlpSpec>,
    pub svm: Option<SvmSpec>,
    pub lda: Option<LdaSpec>,
    pub sweep: SweepSpec,
    pub output: OutputSpec,
}

impl ExperimentConfig {
    /// Family-default convergence target when the config leaves it unset.
    pub fn conv_target(&self) -> f64 {
        self.dataset
            .conv_target
            .unwrap_or(if self.puf.kind.is_twisted() { 0.72 } else { 0.80 })
    }

    pub fn parse_file(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw = RawConfig::parse(text)?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let mut master_seed = 42u64;
        let mut puf = PufSpec {
            kind: PufKind::XorBr,
            m: 64,
            k: 4,
            chips: 3,
        };
        let mut obfuscation = None;
        let mut dataset = DatasetSpec {
            train_sizes: vec![20_000],
            test_size: 20_000,
            iterations: 3,
            sigma: SigmaSpec::Auto,
            noise_target: 0.02,
            conv_target: None,
            lfsr_taps: DEFAULT_TAPS,
        };
        let mut mlps: Vec<MlpSpec> = Vec::new();
        let mut svm = None;
        let mut lda = None;
        let mut sweep = SweepSpec::default();
        let mut output = OutputSpec {
            dir: "out".to_string(),
            format: ReportFormat::Json,
        };

        for section in &raw.sections {
            match section.name.as_str() {
                "experiment" => {
                    for kv in &section.entries {
                        match kv.key.as_str() {
                            "master_seed" => master_seed = kv.parse()?,
                            _ => return Err(kv.unknown_key("experiment")),
                        }
                    }
                }
                "puf" => {
                    for kv in &section.entries {
                        match kv.key.as_str() {
                            "kind" => {
                                puf.kind = PufKind::parse(&kv.value)
                                    .map_err(|e| Error::parse(kv.line, e.to_string()))?
                            }
                            "m" => puf.m = kv.parse()?,
                            "k" => puf.k = kv.parse()?,
                            "chips" => puf.chips = kv.parse()?,
                            _ => return Err(kv.unknown_key("puf")),
                        }
                    }
                }
                "obfuscation" => {
                    for kv in &section.entries {
                        match kv.key.as_str() {
                            "kind" => {
                                obfuscation = match kv.value.as_str() {
                                    "none" => None,
                                    "mask" => Some(ObfuscationKind::Mask),
                                    "shuffle" => Some(ObfuscationKind::Shuffle),
                                    other => {
                                        return Err(Error::parse(
                                            kv.line,
                                            format!("unknown obfuscation kind {other:?}"),
                                        ))
                                    }
                                }
                            }
                            _ => return Err(kv.unknown_key("obfuscation")),
                        }
                    }
                }
                "dataset" => {
                    for kv in &section.entries {
                        match kv.key.as_str() {
                            "train_sizes" => dataset.train_sizes = kv.parse_list()?,
                            "test_size" => dataset.test_size = kv.parse()?,
                            "iterations" => dataset.iterations = kv.parse()?,
                            "sigma" => {
                                dataset.sigma = if kv.value == "auto" {
                                    SigmaSpec::Auto
                                } else {
                                    SigmaSpec::Fixed(kv.parse()?)
                                }
                            }
                            "noise_target" => dataset.noise_target = kv.parse()?,
                            "conv_target" => dataset.conv_target = Some(kv.parse()?),
                            "lfsr_taps" => {
                                let hex = kv.value.strip_prefix("0x").ok_or_else(|| {
                                    Error::parse(kv.line, "lfsr_taps must start with 0x")
                                })?;
                                dataset.lfsr_taps = u64::from_str_radix(hex, 16)
                                    .map_err(|e| Error::parse(kv.line, e.to_string()))?;
                            }
                            _ => return Err(kv.unknown_key("dataset")),
                        }
                    }
                }
                "mlp" => {
                    let mut spec = MlpSpec::default();
                    for kv in &section.entries {
                        match kv.key.as_str() {
                            "layers" => spec.layers = kv.parse()?,
                            "hidden" => spec.hidden = kv.parse()?,
                            "learning_rate" => spec.learning_rate = kv.parse()?,
                            "dropout" => spec.dropout = kv.parse()?,
                            "batch_size" => spec.batch_size = kv.parse()?,
                            "max_iterations" => spec.max_iterations = kv.parse()?,
                            "stop_window" => spec.stop_window = kv.parse()?,
                            "stop_digits" => spec.stop_digits = kv.parse()?,
                            "checkpoint_every" => spec.checkpoint_every = kv.parse()?,
                            _ => return Err(kv.unknown_key("mlp")),
                        }
                    }
                    mlps.push(spec);
                }
                "svm" => {
                    let mut spec = SvmSpec::default();
                    for kv in &section.entries {
                        match kv.key.as_str() {
                            "degree" => spec.degree = kv.parse()?,
                            "c_grid" => spec.c_grid = kv.parse_list()?,
                            "cap" => spec.cap = kv.parse()?,
                            _ => return Err(kv.unknown_key("svm")),
                        }
                    }
                    svm = Some(spec);
                }
                "lda" => {
                    let mut spec = LdaSpec { samples: 100_000 };
                    for kv in &section.entries {
                        match kv.key.as_str() {
                            "samples" => spec.samples = kv.parse()?,
                            _ => return Err(kv.unknown_key("lda")),
                        }
                    }
                    lda = Some(spec);
                }
                "sweep" => {
                    for kv in &section.entries {
                        match kv.key.as_str() {
                            "layers" => sweep.layers = kv.parse_list()?,
                            "hidden" => sweep.hidden = kv.parse_list()?,
                            "full_layers" => sweep.full_layers = kv.parse_list()?,
                            "full_hidden" => sweep.full_hidden = kv.parse_list()?,
                            "train_size" => sweep.train_size = kv.parse()?,
                            _ => return Err(kv.unknown_key("sweep")),
                        }
                    }
                }
                "output" => {
                    for kv in &section.entries {
                        match kv.key.as_str() {
                            "dir" => output.dir = kv.value.clone(),
                            "format" => {
                                output.format = ReportFormat::parse(&kv.value)
                                    .map_err(|e| Error::parse(kv.line, e.to_string()))?
                            }
                            _ => return Err(kv.unknown_key("output")),
                        }
                    }
                }
                other => {
                    return Err(Error::parse(
                        section.line,
                        format!("unknown section [{other}]"),
                    ))
                }
            }
        }
        if mlps.is_empty() {
            mlps.push(MlpSpec::default());
        }
        let cfg = ExperimentConfig {
            master_seed,
            puf,
            obfuscation,
            dataset,
            mlps,
            svm,
            lda,
            sweep,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.puf.m < 2 || self.puf.m % 2 != 0 {
            return Err(Error::invalid("puf.m must be even and >= 2"));
        }
        if self.puf.k == 0 {
            return Err(Error::invalid("puf.k must be >= 1"));
        }
        if matches!(self.puf.kind, PufKind::Br | PufKind::Tbr) && self.puf.k != 1 {
            return Err(Error::invalid("single-ring kinds require k = 1"));
        }
        if self.puf.chips == 0 {
            return Err(Error::invalid("puf.chips must be >= 1"));
        }
        if self.dataset.iterations % 2 == 0 {
            return Err(Error::invalid("dataset.iterations must be odd"));
        }
        if let SigmaSpec::Fixed(s) = self.dataset.sigma {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::invalid("dataset.sigma must be >= 0"));
            }
        }
        if let Some(t) = self.dataset.conv_target {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid("dataset.conv_target must be in (0, 1]"));
            }
        }
        if self.dataset.train_sizes.is_empty() {
            return Err(Error::invalid("dataset.train_sizes must be nonempty"));
        }
        Ok(())
    }
}

struct KeyValue {
    key: String,
    value: String,
    line: usize,
}

impl KeyValue {
    fn parse<T: std::str::FromStr>(&self) -> Result<T> {
        self.value
            .parse()
            .map_err(|_| Error::parse(self.line, format!("bad value {:?} for {}", self.value, self.key)))
    }

    fn parse_list<T: std::str::FromStr>(&self) -> Result<Vec<T>> {
        let items: Result<Vec<T>> = self
            .value
            .split(',')
            .map(|s| {
                s.trim().parse().map_err(|_| {
                    Error::parse(
                        self.line,
                        format!("bad list element {:?} for {}", s.trim(), self.key),
                    )
                })
            })
            .collect();
        let items = items?;
        if items.is_empty() {
            return Err(Error::parse(self.line, format!("{} list is empty", self.key)));
        }
        Ok(items)
    }

    fn unknown_key(&self, section: &str) -> Error {
        Error::parse(
            self.line,
            format!("unknown key {:?} in section [{section}]", self.key),
        )
    }
}

struct RawSection {
    name: String,
    line: usize,
    entries: Vec<KeyValue>,
}

struct RawConfig {
    sections: Vec<RawSection>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<RawSection> = Vec::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(line_no, "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::parse(line_no, "empty section name"));
                }
                sections.push(RawSection {
                    name: name.to_string(),
                    line: line_no,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, "expected key = value"))?;
            let section = sections
                .last_mut()
                .ok_or_else(|| Error::parse(line_no, "key outside any [section]"))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::parse(line_no, "empty key"));
            }
            if section.entries.iter().any(|e| e.key == key) {
                return Err(Error::parse(
                    line_no,
                    format!("duplicate key {key:?} in section [{}]", section.name),
                ));
            }
            section.entries.push(KeyValue {
                key,
                value: value.trim().to_string(),
                line: line_no,
            });
        }
        Ok(RawConfig { sections })
    }
}
