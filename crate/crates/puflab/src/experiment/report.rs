//! Experiment reports: a deterministic body (byte-identical across runs of
//! the same config and seed), a volatile timing section, and an environment
//! stamp. JSON output is canonical: keys sorted, fixed field order.

use crate::error::{Error, Result};
use crate::experiment::config::ReportFormat;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum CellOutcome {
    Ok {
        accuracy: f64,
        /// Iterations to the stopping rule (MLP) or solver sweeps (SVM).
        iterations_to_stop: Option<usize>,
        /// Attacker-specific detail, e.g. the grid-search choice.
        detail: Option<String>,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub train_size: usize,
    pub attacker: String,
    pub config_hash: String,
    pub outcome: CellOutcome,
}

impl ReportCell {
    pub fn id(&self) -> String {
        format!("train{}/{}", self.train_size, self.attacker)
    }

    pub fn accuracy(&self) -> Option<f64> {
        match &self.outcome {
            CellOutcome::Ok { accuracy, .. } => Some(*accuracy),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub config_hash: String,
    pub master_seed: u64,
    pub puf_kind: String,
    pub m: usize,
    pub k: usize,
    pub obfuscation: Option<String>,
    pub theta: f64,
    pub sigma: f64,
    pub cells: Vec<ReportCell>,
    /// Sweep winner (best accuracy, ties by minimum training time).
    pub winner: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub id: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub cells: Vec<CellTiming>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub package_version: String,
    pub os: String,
    pub arch: String,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub body: ReportBody,
    pub timing: Timing,
    pub environment: Environment,
}

impl ExperimentReport {
    /// Canonical JSON of the deterministic body only.
    pub fn body_json(&self) -> Result<String> {
        canonical_json(&self.body)
    }

    pub fn to_json(&self) -> Result<String> {
        canonical_json(self)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let report: ExperimentReport = serde_json::from_slice(bytes)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported report schema {}",
                report.schema_version
            )));
        }
        for cell in &report.body.cells {
            if let Some(acc) = cell.accuracy() {
                if !(0.0..=1.0).contains(&acc) {
                    return Err(Error::Format(format!(
                        "cell {} accuracy {acc} outside [0, 1]",
                        cell.id()
                    )));
                }
            }
            if cell.config_hash.is_empty() {
                return Err(Error::Format(format!("cell {} missing config hash", cell.id())));
            }
        }
        Ok(report)
    }

    /// Table layout: one row per train size, one column per attacker.
    pub fn to_table(&self) -> String {
        let attackers: Vec<String> = {
            let mut seen = Vec::new();
            for c in &self.body.cells {
                if !seen.contains(&c.attacker) {
                    seen.push(c.attacker.clone());
                }
            }
            seen
        };
        let train_sizes: BTreeSet<usize> =
            self.body.cells.iter().map(|c| c.train_size).collect();
        let mut out = String::new();
        out.push_str(&format!(
            "PUF {} m={} k={} obfuscation={} (theta={:.4}, sigma={:.4})\n",
            self.body.puf_kind,
            self.body.m,
            self.body.k,
            self.body.obfuscation.as_deref().unwrap_or("none"),
            self.body.theta,
            self.body.sigma,
        ));
        out.push_str(&format!("{:>10}", "train"));
        for a in &attackers {
            out.push_str(&format!("  {a:>18}"));
        }
        out.push('\n');
        for &ts in &train_sizes {
            out.push_str(&format!("{ts:>10}"));
            for a in &attackers {
                let cell = self
                    .body
                    .cells
                    .iter()
                    .find(|c| c.train_size == ts && &c.attacker == a);
                let rendered = match cell {
                    Some(c) => match &c.outcome {
                        CellOutcome::Ok { accuracy, .. } => format!("{:.2}%", accuracy * 100.0),
                        CellOutcome::Failed { .. } => "ERROR".to_string(),
                    },
                    None => "-".to_string(),
                };
                out.push_str(&format!("  {rendered:>18}"));
            }
            out.push('\n');
        }
        if let Some(w) = &self.body.winner {
            out.push_str(&format!("winner: {w}\n"));
        }
        out
    }

    /// CSV layout: a header line then one line per cell.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("train_size,attacker,status,accuracy,iterations_to_stop,seconds,config_hash\n");
        for cell in &self.body.cells {
            let seconds = self
                .timing
                .cells
                .iter()
                .find(|t| t.id == cell.id())
                .map(|t| format!("{:.3}", t.seconds))
                .unwrap_or_default();
            match &cell.outcome {
                CellOutcome::Ok {
                    accuracy,
                    iterations_to_stop,
                    ..
                } => {
                    out.push_str(&format!(
                        "{},{},ok,{},{},{},{}\n",
                        cell.train_size,
                        cell.attacker,
                        accuracy,
                        iterations_to_stop.map(|i| i.to_string()).unwrap_or_default(),
                        seconds,
                        cell.config_hash
                    ));
                }
                CellOutcome::Failed { error } => {
                    out.push_str(&format!(
                        "{},{},failed,,,{},{} # {}\n",
                        cell.train_size,
                        cell.attacker,
                        seconds,
                        cell.config_hash,
                        error.replace('\n', " ")
                    ));
                }
            }
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        Ok(match format {
            ReportFormat::Json => self.to_json()?,
            ReportFormat::Table => self.to_table(),
            ReportFormat::Csv => self.to_csv(),
        })
    }

    /// Writes via a temp file and rename, so readers never observe a
    /// partial report.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let rendered = self.to_json()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(rendered.as_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Serializes with sorted keys: serde_json's default map is ordered, so a
/// Value round-trip canonicalizes field order.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> ExperimentReport {
        ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            body: ReportBody {
                config_hash: "abc123".into(),
                master_seed: 5,
                puf_kind: "xor-br".into(),
                m: 64,
                k: 4,
                obfuscation: None,
                theta: 1.5,
                sigma: 0.3,
                cells: vec![
                    ReportCell {
                        train_size: 5000,
                        attacker: "mlp[N=4,K=256]".into(),
                        config_hash: "abc123".into(),
                        outcome: CellOutcome::Ok {
                            accuracy: 0.93,
                            iterations_to_stop: Some(8000),
                            detail: None,
                        },
                    },
                    ReportCell {
                        train_size: 5000,
                        attacker: "svm[d=4]".into(),
                        config_hash: "abc123".into(),
                        outcome: CellOutcome::Failed {
                            error: "size error".into(),
                        },
                    },
                    ReportCell {
                        train_size: 20000,
                        attacker: "mlp[N=4,K=256]".into(),
                        config_hash: "abc123".into(),
                        outcome: CellOutcome::Ok {
                            accuracy: 0.97,
                            iterations_to_stop: Some(9000),
                            detail: None,
                        },
                    },
                ],
                winner: None,
            },
            timing: Timing {
                cells: vec![CellTiming {
                    id: "train5000/mlp[N=4,K=256]".into(),
                    seconds: 12.5,
                }],
                total_seconds: 13.0,
            },
            environment: Environment::current(),
        }
    }

    #[test]
    fn json_roundtrip_is_identity() {
        let report = sample_report();
        let json = report.to_json().unwrap();
        let back = ExperimentReport::from_json(json.as_bytes()).unwrap();
        assert_eq!(back, report);
        // Canonical: serialize(parse(json)) == json.
        assert_eq!(back.to_json().unwrap(), json);
    }

    #[test]
    fn from_json_validates() {
        let mut report = sample_report();
        report.body.cells[0] = ReportCell {
            train_size: 1,
            attacker: "x".into(),
            config_hash: "h".into(),
            outcome: CellOutcome::Ok {
                accuracy: 1.5,
                iterations_to_stop: None,
                detail: None,
            },
        };
        let json = report.to_json().unwrap();
        assert!(ExperimentReport::from_json(json.as_bytes()).is_err());
        assert!(ExperimentReport::from_json(b"junk").is_err());
    }

    #[test]
    fn table_has_row_per_train_size_and_column_per_attacker() {
        let table = sample_report().to_table();
        let lines: Vec<&str> = table.lines().collect();
        // Header line + column header + 2 train sizes.
        assert_eq!(lines.len(), 4);
        assert!(lines[1].contains("mlp[N=4,K=256]"));
        assert!(lines[1].contains("svm[d=4]"));
        assert!(lines[2].starts_with(&format!("{:>10}", "5000")));
        assert!(lines[2].contains("ERROR"));
        assert!(lines[3].starts_with(&format!("{:>10}", "20000")));
    }

    #[test]
    fn csv_line_count_is_cells_plus_header() {
        let report = sample_report();
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), report.body.cells.len() + 1);
    }

    #[test]
    fn body_json_excludes_timing() {
        let report = sample_report();
        let body = report.body_json().unwrap();
        assert!(!body.contains("seconds"));
        assert!(body.contains("config_hash"));
    }
}
