//! End-to-end experiment orchestration: instance construction, threshold and
//! noise calibration, CRP pool collection, per-cell attacks, and the
//! layers-by-neurons scalability sweep. One master seed pins everything.

use crate::dataset::{
    collect_crps_with_provenance, split_dataset, CrpDataset,
};
use crate::error::{Error, Result};
use crate::experiment::config::{
    ExperimentConfig, MlpSpec, ObfuscationKind, SigmaSpec, SvmSpec,
};
use crate::experiment::report::{
    canonical_json, CellOutcome, CellTiming, Environment, ExperimentReport, ReportBody,
    ReportCell, Timing, REPORT_SCHEMA_VERSION,
};
use crate::lfsr::{lfsr_generate, GaloisLfsr};
use crate::metrics::build_instance;
use crate::ml::lda::{fit_lda, LdaResult};
use crate::ml::mlp::{MlpConfig, MlpModel};
use crate::ml::svm::{grid_search_svm, train_svm_poly, SvmParams};
use crate::obfuscation::{MaskConfig, ObfuscationConfig, ShuffleConfig};
use crate::puf::{calibrate_noise_sigma, calibrate_threshold, NoiseModel, XorPufInstance};
use crate::seed;
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::time::Instant;

/// Derived-seed roles for one experiment. Chip index 0 is the attacked chip.
pub struct ExperimentSeeds {
    master: u64,
}

impl ExperimentSeeds {
    pub fn new(master: u64) -> Self {
        ExperimentSeeds { master }
    }

    pub fn chip(&self, index: usize) -> u64 {
        seed::derive_labeled(self.master, "chip", index as u64)
    }

    pub fn obfuscation(&self) -> u64 {
        seed::derive_labeled(self.master, "obfuscation", 0)
    }

    pub fn lfsr_calibration(&self) -> u64 {
        seed::derive_labeled(self.master, "lfsr-calibration", 0)
    }

    pub fn lfsr_pool(&self) -> u64 {
        seed::derive_labeled(self.master, "lfsr-pool", 0)
    }

    pub fn noise(&self, chip: usize) -> u64 {
        seed::derive_labeled(self.master, "noise", chip as u64)
    }

    pub fn noise_probe(&self, chip: usize) -> u64 {
        seed::derive_labeled(self.master, "noise-probe", chip as u64)
    }

    pub fn split_test(&self) -> u64 {
        seed::derive_labeled(self.master, "split-test", 0)
    }

    pub fn split_train(&self, train_size: usize) -> u64 {
        seed::derive_labeled(self.master, "split-train", train_size as u64)
    }

    pub fn mlp(&self, spec_index: usize, train_size: usize) -> u64 {
        seed::derive_labeled(
            self.master,
            "mlp",
            (spec_index as u64) << 40 | train_size as u64,
        )
    }

    pub fn svm(&self, train_size: usize) -> u64 {
        seed::derive_labeled(self.master, "svm", train_size as u64)
    }

    pub fn sweep_cell(&self, layers: usize, hidden: usize) -> u64 {
        seed::derive_labeled(self.master, "sweep", (layers as u64) << 32 | hidden as u64)
    }
}

/// SHA-256 of the canonical config serialization; stamped on every cell.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let json = canonical_json(cfg)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// The attacked instance plus its calibrated operating point and CRP pool.
pub struct PreparedExperiment {
    pub puf: XorPufInstance,
    pub obfuscation: Option<ObfuscationConfig>,
    pub theta: f64,
    pub sigma: f64,
    pub noise: NoiseModel,
    pub pool: CrpDataset,
    pub test: CrpDataset,
    /// Pool records minus the test split; train cells draw from this.
    pub attack_pool: CrpDataset,
    pub hash: String,
}

/// Builds the chip-0 instance, calibrates theta and sigma, and collects a
/// converged CRP pool large enough for the biggest train size plus the test
/// set.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedExperiment> {
    let seeds = ExperimentSeeds::new(cfg.master_seed);
    let puf = build_instance(cfg.puf.kind, cfg.puf.m, cfg.puf.k, seeds.chip(0))?;
    let obfuscation = match cfg.obfuscation {
        None => None,
        Some(ObfuscationKind::Mask) => Some(ObfuscationConfig::Mask(MaskConfig::new(
            cfg.puf.m,
            seeds.obfuscation(),
        )?)),
        Some(ObfuscationKind::Shuffle) => Some(ObfuscationConfig::Shuffle(ShuffleConfig::new(
            cfg.puf.m,
            seeds.obfuscation(),
        )?)),
    };

    let mut calib_lfsr = GaloisLfsr::new(64, cfg.dataset.lfsr_taps, seeds.lfsr_calibration())?;
    let calib_originals = lfsr_generate(&mut calib_lfsr, 10_000, cfg.puf.m)?;
    // Theta and sigma are physical properties of the ring; calibrate on the
    // challenges the PUF actually sees (post-obfuscation).
    let calib: Vec<_> = match &obfuscation {
        Some(obf) => calib_originals
            .iter()
            .map(|c| obf.apply(c))
            .collect::<Result<_>>()?,
        None => calib_originals.clone(),
    };
    let conv_target = cfg.conv_target();
    let theta = calibrate_threshold(&puf, conv_target, &calib)?;
    let sigma = match cfg.dataset.sigma {
        SigmaSpec::Fixed(s) => s,
        SigmaSpec::Auto => calibrate_noise_sigma(
            &puf,
            theta,
            &calib[..calib.len().min(4000)],
            cfg.dataset.noise_target,
            cfg.dataset.iterations,
            seeds.noise_probe(0),
        )?,
    };
    let noise = NoiseModel {
        sigma,
        rng_seed: seeds.noise(0),
    };

    let max_train = cfg.dataset.train_sizes.iter().copied().max().unwrap_or(0);
    let needed = max_train + cfg.dataset.test_size;
    if needed == 0 {
        return Err(Error::invalid("experiment needs a nonzero dataset"));
    }
    // Collect in one pass; rate estimates come from calibration, with a
    // retry at a larger margin if noise-induced misses leave us short.
    let mut margin = 1.15;
    let pool = loop {
        let target = ((needed as f64 / conv_target) * margin) as usize + 1000;
        let mut pool_lfsr = GaloisLfsr::new(64, cfg.dataset.lfsr_taps, seeds.lfsr_pool())?;
        let challenges = lfsr_generate(&mut pool_lfsr, target, cfg.puf.m)?;
        let ds = collect_crps_with_provenance(
            &puf,
            obfuscation.as_ref(),
            &challenges,
            cfg.dataset.iterations,
            &noise,
            theta,
            seeds.chip(0),
            cfg.dataset.lfsr_taps,
            seeds.lfsr_pool(),
        )?;
        if ds.len() >= needed {
            break ds;
        }
        margin *= 1.5;
        if margin > 4.0 {
            return Err(Error::Numerical(format!(
                "convergence rate far below target: collected {} of {needed}",
                ds.len()
            )));
        }
    };
    let (attack_pool, test) = split_dataset(
        &pool,
        pool.len() - cfg.dataset.test_size,
        cfg.dataset.test_size,
        seeds.split_test(),
    )?;
    Ok(PreparedExperiment {
        puf,
        obfuscation,
        theta,
        sigma,
        noise,
        pool,
        test,
        attack_pool,
        hash: config_hash(cfg)?,
    })
}

fn mlp_attacker_id(spec: &MlpSpec) -> String {
    format!("mlp[N={},K={}]", spec.layers, spec.hidden)
}

fn mlp_config_from_spec(spec: &MlpSpec, m: usize, seed_value: u64) -> MlpConfig {
    let mut mc = MlpConfig::new(m, spec.layers, spec.hidden, seed_value);
    mc.learning_rate = spec.learning_rate;
    mc.dropout_rate = spec.dropout;
    mc.batch_size = spec.batch_size;
    mc.max_iterations = spec.max_iterations;
    mc.stop_window = spec.stop_window;
    mc.stop_digits = spec.stop_digits;
    mc.checkpoint_every = spec.checkpoint_every;
    mc
}

fn run_mlp_cell(
    spec: &MlpSpec,
    m: usize,
    seed_value: u64,
    train: &CrpDataset,
    test_x: &Array2<f64>,
    test_y: &[f64],
) -> Result<(f64, usize, MlpModel)> {
    let (tx, ty) = train.encode_pm1();
    let mut model = MlpModel::build(mlp_config_from_spec(spec, m, seed_value))?;
    model.train(&tx, &Array1::from_vec(ty.to_vec()))?;
    let accuracy = model.accuracy(&test_x.view(), test_y)?;
    Ok((accuracy, model.trained_iterations(), model))
}

fn run_svm_cell(
    spec: &SvmSpec,
    seed_value: u64,
    train: &CrpDataset,
    test_x: &Array2<f64>,
    test_y: &[bool],
) -> Result<(f64, usize, String)> {
    let (tx, ty01) = train.encode_pm1();
    let ty: Vec<bool> = ty01.iter().map(|&v| v > 0.5).collect();
    let mut params = SvmParams::new(spec.degree, 1.0);
    params.cap = spec.cap;
    params.seed = seed_value;
    // Grid-search C on an internal 80/20 split, then retrain on the full
    // cell training set with the chosen C.
    let chosen_c = if spec.c_grid.len() > 1 {
        let val_size = (train.len() / 5).max(1);
        let (gs_train, gs_val) = split_dataset(
            train,
            train.len() - val_size,
            val_size,
            seed::derive(seed_value, 1),
        )?;
        let (gx, gy01) = gs_train.encode_pm1();
        let gy: Vec<bool> = gy01.iter().map(|&v| v > 0.5).collect();
        let (vx, vy01) = gs_val.encode_pm1();
        let vy: Vec<bool> = vy01.iter().map(|&v| v > 0.5).collect();
        let choice = grid_search_svm(
            &gx.view(),
            &gy,
            &vx.view(),
            &vy,
            &[spec.degree],
            &spec.c_grid,
            &params,
        )?;
        choice.c
    } else {
        *spec.c_grid.first().unwrap_or(&1.0)
    };
    params.c = chosen_c;
    let (model, diag) = train_svm_poly(&tx.view(), &ty, &params)?;
    let accuracy = model.accuracy(&test_x.view(), test_y)?;
    Ok((accuracy, diag.sweeps, format!("C={chosen_c},degree={}", spec.degree)))
}

/// One (train size x attacker) grid over the prepared pool. Cells run in
/// parallel; each derives its own seeds, so scheduling cannot change
/// results. Failures become per-cell markers, never dropped cells.
pub fn run_attack_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let total_start = Instant::now();
    let prepared = prepare(cfg)?;
    let seeds = ExperimentSeeds::new(cfg.master_seed);
    let (test_x, test_y01) = prepared.test.encode_pm1();
    let test_y: Vec<f64> = test_y01.to_vec();
    let test_y_bool: Vec<bool> = test_y.iter().map(|&v| v > 0.5).collect();

    enum CellSpec<'a> {
        Mlp { index: usize, spec: &'a MlpSpec },
        Svm { spec: &'a SvmSpec },
    }
    let mut grid: Vec<(usize, CellSpec)> = Vec::new();
    for &train_size in &cfg.dataset.train_sizes {
        for (index, spec) in cfg.mlps.iter().enumerate() {
            grid.push((train_size, CellSpec::Mlp { index, spec }));
        }
        if let Some(spec) = &cfg.svm {
            grid.push((train_size, CellSpec::Svm { spec }));
        }
    }

    let outcomes: Vec<(ReportCell, CellTiming)> = grid
        .par_iter()
        .map(|(train_size, cell_spec)| {
            let start = Instant::now();
            let attacker = match cell_spec {
                CellSpec::Mlp { spec, .. } => mlp_attacker_id(spec),
                CellSpec::Svm { spec } => format!("svm[d={}]", spec.degree),
            };
            let run = || -> Result<CellOutcome> {
                let (train, _) = split_dataset(
                    &prepared.attack_pool,
                    *train_size,
                    0,
                    seeds.split_train(*train_size),
                )?;
                match cell_spec {
                    CellSpec::Mlp { index, spec } => {
                        let (accuracy, iters, _) = run_mlp_cell(
                            spec,
                            cfg.puf.m,
                            seeds.mlp(*index, *train_size),
                            &train,
                            &test_x,
                            &test_y,
                        )?;
                        Ok(CellOutcome::Ok {
                            accuracy,
                            iterations_to_stop: Some(iters),
                            detail: None,
                        })
                    }
                    CellSpec::Svm { spec } => {
                        let (accuracy, sweeps, detail) = run_svm_cell(
                            spec,
                            seeds.svm(*train_size),
                            &train,
                            &test_x,
                            &test_y_bool,
                        )?;
                        Ok(CellOutcome::Ok {
                            accuracy,
                            iterations_to_stop: Some(sweeps),
                            detail: Some(detail),
                        })
                    }
                }
            };
            let outcome = run().unwrap_or_else(|e| CellOutcome::Failed {
                error: format!("cell train{train_size}/{attacker}: {e}"),
            });
            let cell = ReportCell {
                train_size: *train_size,
                attacker,
                config_hash: prepared.hash.clone(),
                outcome,
            };
            let timing = CellTiming {
                id: cell.id(),
                seconds: start.elapsed().as_secs_f64(),
            };
            (cell, timing)
        })
        .collect();

    let (cells, cell_timings): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        body: ReportBody {
            config_hash: prepared.hash.clone(),
            master_seed: cfg.master_seed,
            puf_kind: cfg.puf.kind.to_string(),
            m: cfg.puf.m,
            k: cfg.puf.k,
            obfuscation: cfg.obfuscation.map(|o| match o {
                ObfuscationKind::Mask => "mask".to_string(),
                ObfuscationKind::Shuffle => "shuffle".to_string(),
            }),
            theta: prepared.theta,
            sigma: prepared.sigma,
            cells,
            winner: None,
        },
        timing: Timing {
            cells: cell_timings,
            total_seconds: total_start.elapsed().as_secs_f64(),
        },
        environment: Environment::current(),
    })
}

/// Trains every (layers, hidden) cell of the sweep grid on one fixed
/// dataset and marks the winner: best accuracy, ties broken by minimum
/// training time.
pub fn run_scalability_sweep(cfg: &ExperimentConfig, full_grid: bool) -> Result<ExperimentReport> {
    let total_start = Instant::now();
    let mut cfg_for_pool = cfg.clone();
    cfg_for_pool.dataset.train_sizes = vec![cfg.sweep.train_size];
    let prepared = prepare(&cfg_for_pool)?;
    let seeds = ExperimentSeeds::new(cfg.master_seed);
    let (test_x, test_y01) = prepared.test.encode_pm1();
    let test_y: Vec<f64> = test_y01.to_vec();
    let (layer_grid, hidden_grid) = if full_grid {
        (&cfg.sweep.full_layers, &cfg.sweep.full_hidden)
    } else {
        (&cfg.sweep.layers, &cfg.sweep.hidden)
    };
    if layer_grid.is_empty() || hidden_grid.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    let train_size = cfg.sweep.train_size;
    let (train, _) = split_dataset(
        &prepared.attack_pool,
        train_size,
        0,
        seeds.split_train(train_size),
    )?;
    let base_spec = cfg.mlps.first().cloned().unwrap_or_default();

    let mut grid_cells: Vec<(usize, usize)> = Vec::new();
    for &layers in layer_grid {
        for &hidden in hidden_grid {
            grid_cells.push((layers, hidden));
        }
    }
    let outcomes: Vec<(ReportCell, CellTiming)> = grid_cells
        .par_iter()
        .map(|&(layers, hidden)| {
            let start = Instant::now();
            let mut spec = base_spec.clone();
            spec.layers = layers;
            spec.hidden = hidden;
            let attacker = mlp_attacker_id(&spec);
            let outcome = run_mlp_cell(
                &spec,
                cfg.puf.m,
                seeds.sweep_cell(layers, hidden),
                &train,
                &test_x,
                &test_y,
            )
            .map(|(accuracy, iters, _)| CellOutcome::Ok {
                accuracy,
                iterations_to_stop: Some(iters),
                detail: None,
            })
            .unwrap_or_else(|e| CellOutcome::Failed {
                error: format!("cell train{train_size}/{attacker}: {e}"),
            });
            let cell = ReportCell {
                train_size,
                attacker,
                config_hash: prepared.hash.clone(),
                outcome,
            };
            let timing = CellTiming {
                id: cell.id(),
                seconds: start.elapsed().as_secs_f64(),
            };
            (cell, timing)
        })
        .collect();
    let (cells, cell_timings): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let winner = pick_winner(&cells, &cell_timings);
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        body: ReportBody {
            config_hash: prepared.hash.clone(),
            master_seed: cfg.master_seed,
            puf_kind: cfg.puf.kind.to_string(),
            m: cfg.puf.m,
            k: cfg.puf.k,
            obfuscation: cfg.obfuscation.map(|o| match o {
                ObfuscationKind::Mask => "mask".to_string(),
                ObfuscationKind::Shuffle => "shuffle".to_string(),
            }),
            theta: prepared.theta,
            sigma: prepared.sigma,
            cells,
            winner,
        },
        timing: Timing {
            cells: cell_timings,
            total_seconds: total_start.elapsed().as_secs_f64(),
        },
        environment: Environment::current(),
    })
}

/// Best accuracy wins; equal accuracies fall back to training time.
pub fn pick_winner(cells: &[ReportCell], timings: &[CellTiming]) -> Option<String> {
    let mut best: Option<(f64, f64, String)> = None;
    for cell in cells {
        let Some(acc) = cell.accuracy() else { continue };
        let secs = timings
            .iter()
            .find(|t| t.id == cell.id())
            .map(|t| t.seconds)
            .unwrap_or(f64::INFINITY);
        let better = match &best {
            None => true,
            Some((bacc, bsecs, _)) => {
                acc > *bacc + f64::EPSILON || ((acc - bacc).abs() <= f64::EPSILON && secs < *bsecs)
            }
        };
        if better {
            best = Some((acc, secs, cell.attacker.clone()));
        }
    }
    best.map(|(_, _, id)| id)
}

/// LDA separability analysis on a fresh corpus from the prepared instance.
pub fn run_lda(cfg: &ExperimentConfig) -> Result<(LdaResult, usize)> {
    let samples = cfg.lda.as_ref().map(|l| l.samples).unwrap_or(100_000);
    let mut cfg_for_pool = cfg.clone();
    cfg_for_pool.dataset.train_sizes = vec![samples.saturating_sub(cfg.dataset.test_size).max(1)];
    let prepared = prepare(&cfg_for_pool)?;
    let take = samples.min(prepared.pool.len());
    let subset = CrpDataset {
        records: prepared.pool.records[..take].to_vec(),
        meta: prepared.pool.meta.clone(),
    };
    let (x, y01) = subset.encode_pm1();
    let y: Vec<bool> = y01.iter().map(|&v| v > 0.5).collect();
    Ok((fit_lda(&x.view(), &y)?, take))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig::parse(
            "[experiment]\nmaster_seed = 9\n\
             [puf]\nkind = xor-br\nm = 16\nk = 2\nchips = 1\n\
             [dataset]\ntrain_sizes = 400, 800\ntest_size = 400\niterations = 1\nsigma = 0\n\
             [mlp]\nlayers = 1\nhidden = 16\nmax_iterations = 400\ncheckpoint_every = 100\n\
             [svm]\ndegree = 2\nc_grid = 1\ncap = 2000\n",
        )
        .unwrap()
    }

    #[test]
    fn attack_report_covers_full_grid() {
        let cfg = tiny_config();
        let report = run_attack_experiment(&cfg).unwrap();
        // 2 train sizes x (1 mlp + 1 svm).
        assert_eq!(report.body.cells.len(), 4);
        for cell in &report.body.cells {
            match &cell.outcome {
                CellOutcome::Ok { accuracy, .. } => {
                    assert!((0.0..=1.0).contains(accuracy));
                }
                CellOutcome::Failed { error } => panic!("unexpected failure: {error}"),
            }
            assert_eq!(cell.config_hash, report.body.config_hash);
        }
        assert_eq!(report.timing.cells.len(), 4);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = tiny_config();
        let a = run_attack_experiment(&cfg).unwrap();
        let b = run_attack_experiment(&cfg).unwrap();
        assert_eq!(a.body_json().unwrap(), b.body_json().unwrap());
    }

    #[test]
    fn failing_cells_are_marked_not_dropped() {
        let mut cfg = tiny_config();
        cfg.dataset.train_sizes = vec![0, 400];
        let report = run_attack_experiment(&cfg).unwrap();
        assert_eq!(report.body.cells.len(), 4);
        let failed: Vec<_> = report
            .body
            .cells
            .iter()
            .filter(|c| matches!(c.outcome, CellOutcome::Failed { .. }))
            .collect();
        // Both train-size-0 cells fail (empty training set), with the cell
        // identity attached.
        assert_eq!(failed.len(), 2);
        for cell in failed {
            assert_eq!(cell.train_size, 0);
            match &cell.outcome {
                CellOutcome::Failed { error } => assert!(error.contains("train0/")),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn sweep_reports_every_grid_cell_and_a_winner() {
        let mut cfg = tiny_config();
        cfg.sweep.layers = vec![1, 2];
        cfg.sweep.hidden = vec![8, 16];
        cfg.sweep.train_size = 400;
        let report = run_scalability_sweep(&cfg, false).unwrap();
        assert_eq!(report.body.cells.len(), 4);
        assert!(report.body.winner.is_some());
    }

    #[test]
    fn winner_tie_prefers_smaller_time() {
        let mk_cell = |attacker: &str, acc: f64| ReportCell {
            train_size: 100,
            attacker: attacker.into(),
            config_hash: "h".into(),
            outcome: CellOutcome::Ok {
                accuracy: acc,
                iterations_to_stop: None,
                detail: None,
            },
        };
        let cells = vec![mk_cell("slow", 0.9), mk_cell("fast", 0.9), mk_cell("low", 0.8)];
        let timings = vec![
            CellTiming {
                id: "train100/slow".into(),
                seconds: 10.0,
            },
            CellTiming {
                id: "train100/fast".into(),
                seconds: 2.0,
            },
            CellTiming {
                id: "train100/low".into(),
                seconds: 0.1,
            },
        ];
        assert_eq!(pick_winner(&cells, &timings).unwrap(), "fast");
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let cfg = tiny_config();
        let h1 = config_hash(&cfg).unwrap();
        let h2 = config_hash(&cfg).unwrap();
        assert_eq!(h1, h2);
        let mut cfg2 = cfg.clone();
        cfg2.master_seed = 10;
        assert_ne!(h1, config_hash(&cfg2).unwrap());
    }
}
