//! Command-line driver: generate CRP corpora, characterize simulated chips,
//! mount attacks, sweep network sizes, run LDA analysis, and re-render
//! reports.

use clap::{Parser, Subcommand, ValueEnum};
use puflab::dataset::{write_dataset, write_dataset_binary_file};
use puflab::experiment::config::ReportFormat;
use puflab::experiment::report::canonical_json;
use puflab::experiment::{
    run_attack_experiment, run_lda, run_scalability_sweep, ExperimentConfig, ExperimentReport,
};
use puflab::metrics::{characterize, CharacterizeOptions};
use puflab::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "puflab", version, about = "Bistable-ring PUF attack workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Table,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Table => ReportFormat::Table,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment config file (line-oriented key = value with [sections]).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format for rendered results.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Build instances and collect CRP corpora to CSV (and packed binary).
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write the packed binary form next to the CSV.
        #[arg(long)]
        binary: bool,
    },
    /// Compute noise, bias, convergence, NHD, and influence metrics.
    Characterize {
        #[command(flatten)]
        common: CommonArgs,
        /// Challenges per chip.
        #[arg(long, default_value_t = 100_000)]
        challenges: usize,
    },
    /// Run the (train size x attacker) modeling-attack grid.
    Attack {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train every (layers, hidden) grid cell and report the winner.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Use the full grid instead of the desk-scale default.
        #[arg(long)]
        full_grid: bool,
    },
    /// Linear discriminant separability analysis.
    Lda {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Re-render an existing report file.
    Report {
        /// Report JSON produced by `attack` or `sweep`.
        #[arg(long, name = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::parse_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.display().to_string();
    }
    if let Some(format) = common.format {
        cfg.output.format = format.into();
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, Error> {
    let dir = PathBuf::from(&cfg.output.dir);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn emit(report: &ExperimentReport, cfg: &ExperimentConfig, path: &Path) -> Result<(), Error> {
    report.write_atomic(path)?;
    println!("report written to {}", path.display());
    match cfg.output.format {
        ReportFormat::Json => {} // already on disk
        other => print!("{}", report.render(other)?),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate { common, binary } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&cfg)?;
            let prepared = puflab::experiment::prepare(&cfg)?;
            let csv_path = dir.join("dataset.csv");
            write_dataset(&prepared.pool, &csv_path)?;
            println!(
                "collected {} CRPs (theta={:.4}, sigma={:.4}) -> {}",
                prepared.pool.len(),
                prepared.theta,
                prepared.sigma,
                csv_path.display()
            );
            if binary {
                let bin_path = dir.join("dataset.crpd");
                write_dataset_binary_file(&prepared.pool, &bin_path)?;
                println!("packed binary -> {}", bin_path.display());
            }
            if let Some(obf) = &prepared.obfuscation {
                let obf_path = dir.join("obfuscation.json");
                std::fs::write(&obf_path, obf.to_json()?)?;
                println!("obfuscation config -> {}", obf_path.display());
            }
            Ok(())
        }
        Command::Characterize { common, challenges } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&cfg)?;
            let seeds = puflab::experiment::runner::ExperimentSeeds::new(cfg.master_seed);
            let report = characterize(&CharacterizeOptions {
                kind: cfg.puf.kind,
                m: cfg.puf.m,
                k: cfg.puf.k,
                chip_seeds: (0..cfg.puf.chips).map(|i| seeds.chip(i)).collect(),
                challenges,
                iterations: cfg.dataset.iterations,
                conv_target: cfg.conv_target(),
                sigma: match cfg.dataset.sigma {
                    puflab::experiment::config::SigmaSpec::Auto => None,
                    puflab::experiment::config::SigmaSpec::Fixed(s) => Some(s),
                },
                noise_target: cfg.dataset.noise_target,
                master_seed: cfg.master_seed,
            })?;
            let path = dir.join("metrics.json");
            std::fs::write(&path, report.to_json()?)?;
            println!("metrics written to {}", path.display());
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Attack { common } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&cfg)?;
            let report = run_attack_experiment(&cfg)?;
            emit(&report, &cfg, &dir.join("attack_report.json"))
        }
        Command::Sweep { common, full_grid } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&cfg)?;
            let report = run_scalability_sweep(&cfg, full_grid)?;
            emit(&report, &cfg, &dir.join("sweep_report.json"))
        }
        Command::Lda { common } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&cfg)?;
            let (result, samples) = run_lda(&cfg)?;
            let path = dir.join("lda.json");
            std::fs::write(&path, canonical_json(&result)?)?;
            println!(
                "LDA on {samples} CRPs: overlap {:.4}, d' {:.4} -> {}",
                result.overlap_coefficient,
                result.dprime,
                path.display()
            );
            Ok(())
        }
        Command::Report { input, format } => {
            let bytes = std::fs::read(&input)?;
            let report = ExperimentReport::from_json(&bytes)?;
            print!("{}", report.render(format.into())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
