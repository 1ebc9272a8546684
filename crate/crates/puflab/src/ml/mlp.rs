//! Fully connected feed-forward networks trained from scratch.
//!
//! Topology: m inputs (±1 encoded), N hidden layers of K units each, a
//! dropout layer between the last hidden layer and the two-logit softmax
//! output. Training minimizes cross-entropy with Adam over shuffled
//! mini-batches; one iteration is one mini-batch update. Batch work is
//! split into fixed-size chunks reduced in index order, so results are
//! bit-reproducible per seed regardless of thread count.

use crate::error::{Error, Result};
use crate::seed::{self, Prng};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Rows per parallel work unit; fixed so chunk boundaries never depend on
/// thread count.
const CHUNK_ROWS: usize = 64;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input width m (PUF stage count).
    pub input_width: usize,
    /// Number of fully connected hidden layers N.
    pub layers: usize,
    /// Hidden neurons per layer K.
    pub hidden: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    /// Plateau window in checkpoints; 0 disables the plateau stop.
    pub stop_window: usize,
    /// Fractional digits the plateau rule compares.
    pub stop_digits: u32,
    pub checkpoint_every: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(input_width: usize, layers: usize, hidden: usize, seed: u64) -> Self {
        MlpConfig {
            input_width,
            layers,
            hidden,
            activation: Activation::Relu,
            dropout_rate: 0.2,
            learning_rate: 1e-4,
            batch_size: 256,
            max_iterations: 1_000_000,
            stop_window: 5,
            stop_digits: 4,
            checkpoint_every: 1000,
            optimizer: Optimizer::Adam,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.layers == 0 || self.hidden == 0 {
            return Err(Error::invalid(
                "input width, layer count, and hidden width must be >= 1",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning rate must be positive and finite"));
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 || self.max_iterations == 0 {
            return Err(Error::invalid(
                "batch size, checkpoint cadence, and max iterations must be >= 1",
            ));
        }
        if self.stop_digits == 0 || self.stop_digits > 15 {
            return Err(Error::invalid("stop digits must be in 1..=15"));
        }
        Ok(())
    }
}

/// Weight-matrix element count of the configured topology:
/// `m*K + (N-1)*K^2 + K*2`. Biases are tracked separately.
pub fn count_weights(cfg: &MlpConfig) -> usize {
    let m = cfg.input_width;
    let k = cfg.hidden;
    let n = cfg.layers;
    m * k + (n - 1) * k * k + k * 2
}

/// Bias element count: one per hidden unit plus the two output units.
pub fn count_biases(cfg: &MlpConfig) -> usize {
    cfg.layers * cfg.hidden + 2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceCheckpoint {
    pub iteration: usize,
    pub training_loss: f64,
    pub training_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub checkpoints: Vec<TraceCheckpoint>,
    pub stop_reason: StopReason,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,accuracy\n");
        for c in &self.checkpoints {
            out.push_str(&format!(
                "{},{},{}\n",
                c.iteration, c.training_loss, c.training_accuracy
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: MlpConfig,
    hidden_w: Vec<Array2<f64>>,
    hidden_b: Vec<Array1<f64>>,
    out_w: Array2<f64>,
    out_b: Array1<f64>,
    trained_iterations: usize,
}

impl MlpModel {
    /// Variance-scaled normal init (std sqrt(2/fan_in)) with small random
    /// biases, deterministic per config seed. Nonzero biases keep
    /// pre-activations off the exact ReLU kink even when an entire layer
    /// goes dead for some sample.
    pub fn build(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng_from_seed(seed::derive_labeled(config.seed, "mlp-init", 0));
        let mut draw = |rows: usize, cols: usize, std: f64| -> Array2<f64> {
            Array2::from_shape_fn((rows, cols), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * std
            })
        };
        let mut hidden_w = Vec::with_capacity(config.layers);
        let mut hidden_b = Vec::with_capacity(config.layers);
        let mut fan_in = config.input_width;
        for _ in 0..config.layers {
            let std = (2.0 / fan_in as f64).sqrt();
            hidden_w.push(draw(fan_in, config.hidden, std));
            hidden_b.push(draw(1, config.hidden, 0.01).row(0).to_owned());
            fan_in = config.hidden;
        }
        let out_w = draw(config.hidden, 2, (2.0 / config.hidden as f64).sqrt());
        let out_b = draw(1, 2, 0.01).row(0).to_owned();
        Ok(MlpModel {
            config,
            hidden_w,
            hidden_b,
            out_w,
            out_b,
            trained_iterations: 0,
        })
    }

    /// All-zero parameters; predicts probability 0.5 everywhere.
    pub fn zeroed(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let k = config.hidden;
        let mut fan_in = config.input_width;
        let mut hidden_w = Vec::new();
        let mut hidden_b = Vec::new();
        for _ in 0..config.layers {
            hidden_w.push(Array2::zeros((fan_in, k)));
            hidden_b.push(Array1::zeros(k));
            fan_in = k;
        }
        Ok(MlpModel {
            config,
            hidden_w,
            hidden_b,
            out_w: Array2::zeros((k, 2)),
            out_b: Array1::zeros(2),
            trained_iterations: 0,
        })
    }

    pub fn weight_element_count(&self) -> usize {
        self.hidden_w.iter().map(|w| w.len()).sum::<usize>() + self.out_w.len()
    }

    pub fn bias_element_count(&self) -> usize {
        self.hidden_b.iter().map(|b| b.len()).sum::<usize>() + self.out_b.len()
    }

    pub fn trained_iterations(&self) -> usize {
        self.trained_iterations
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.config.input_width {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_width,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn activate(&self, z: &mut Array2<f64>) {
        match self.config.activation {
            Activation::Relu => z.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Forward pass returning per-layer raw activations (input first), the
    /// dropout-scaled output of the last hidden layer, and the logits.
    fn forward_cache(
        &self,
        x: &ArrayView2<f64>,
        dropout_mask: Option<&ArrayView2<f64>>,
    ) -> (Vec<Array2<f64>>, Array2<f64>, Array2<f64>) {
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.config.layers + 1);
        acts.push(x.to_owned());
        for l in 0..self.config.layers {
            let mut z = acts[l].dot(&self.hidden_w[l]) + &self.hidden_b[l];
            self.activate(&mut z);
            acts.push(z);
        }
        let last = acts.last().expect("at least one layer");
        let head_input = match dropout_mask {
            Some(mask) => last * mask,
            None => last.clone(),
        };
        let logits = head_input.dot(&self.out_w) + &self.out_b;
        (acts, head_input, logits)
    }

    /// P(t = 1 | x) per row. In training mode a dropout mask is drawn from
    /// `rng`; evaluation mode is deterministic.
    pub fn forward(
        &self,
        x: &ArrayView2<f64>,
        train_mode: bool,
        rng: Option<&mut Prng>,
    ) -> Result<Array1<f64>> {
        self.check_input(x)?;
        if train_mode && self.config.dropout_rate > 0.0 {
            let rng = rng.ok_or_else(|| {
                Error::invalid("training-mode forward with dropout needs an RNG")
            })?;
            let mask = draw_dropout_mask(
                x.nrows(),
                self.config.hidden,
                self.config.dropout_rate,
                rng,
            );
            let (_, _, logits) = self.forward_cache(x, Some(&mask.view()));
            Ok(probabilities(&logits))
        } else {
            let (_, _, logits) = self.forward_cache(x, None);
            Ok(probabilities(&logits))
        }
    }

    /// Deterministic evaluation-mode probabilities, chunk-parallel.
    pub fn predict_proba(&self, x: &ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_input(x)?;
        let rows = x.nrows();
        if rows == 0 {
            return Ok(Array1::zeros(0));
        }
        let chunks: Vec<Array1<f64>> = (0..rows.div_ceil(CHUNK_ROWS))
            .into_par_iter()
            .map(|ci| {
                let lo = ci * CHUNK_ROWS;
                let hi = (lo + CHUNK_ROWS).min(rows);
                let (_, _, logits) = self.forward_cache(&x.slice(s![lo..hi, ..]), None);
                probabilities(&logits)
            })
            .collect();
        let mut out = Array1::zeros(rows);
        let mut at = 0;
        for c in chunks {
            out.slice_mut(s![at..at + c.len()]).assign(&c);
            at += c.len();
        }
        Ok(out)
    }

    /// Mean cross-entropy loss in evaluation mode.
    pub fn loss(&self, x: &ArrayView2<f64>, y: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::invalid("loss needs matching, nonempty inputs"));
        }
        let p = self.predict_proba(x)?;
        let mut total = 0.0;
        for (pi, &yi) in p.iter().zip(y) {
            let q = if yi > 0.5 { *pi } else { 1.0 - *pi };
            total += neg_log(q);
        }
        Ok(total / y.len() as f64)
    }

    /// Analytic gradients of the mean cross-entropy over the batch, in
    /// evaluation mode or with a caller-fixed dropout mask. Returns the
    /// mean loss alongside.
    pub fn gradients(
        &self,
        x: &ArrayView2<f64>,
        y: &[f64],
        dropout_mask: Option<&ArrayView2<f64>>,
    ) -> Result<(Grads, f64)> {
        self.check_input(x)?;
        if x.nrows() != y.len() || y.is_empty() {
            return Err(Error::invalid("gradients need matching, nonempty inputs"));
        }
        let inv = 1.0 / y.len() as f64;
        let (grads, loss_sum) = self.forward_backward(x, y, dropout_mask, inv);
        Ok((grads, loss_sum * inv))
    }

    /// Chunk-local forward/backward. Gradients are pre-scaled by
    /// `inv_total`; the returned loss is the un-normalized CE sum.
    fn forward_backward(
        &self,
        x: &ArrayView2<f64>,
        y: &[f64],
        dropout_mask: Option<&ArrayView2<f64>>,
        inv_total: f64,
    ) -> (Grads, f64) {
        let (acts, head_input, logits) = self.forward_cache(x, dropout_mask);
        let rows = x.nrows();
        // Softmax over the two logits and CE loss.
        let mut dlogits = Array2::zeros((rows, 2));
        let mut loss_sum = 0.0;
        for r in 0..rows {
            let z0 = logits[[r, 0]];
            let z1 = logits[[r, 1]];
            let mx = z0.max(z1);
            let e0 = (z0 - mx).exp();
            let e1 = (z1 - mx).exp();
            let denom = e0 + e1;
            let p0 = e0 / denom;
            let p1 = e1 / denom;
            let target_one = y[r] > 0.5;
            loss_sum += neg_log(if target_one { p1 } else { p0 });
            dlogits[[r, 0]] = (p0 - if target_one { 0.0 } else { 1.0 }) * inv_total;
            dlogits[[r, 1]] = (p1 - if target_one { 1.0 } else { 0.0 }) * inv_total;
        }
        let g_out_w = head_input.t().dot(&dlogits);
        let g_out_b = dlogits.sum_axis(Axis(0));
        let mut da = dlogits.dot(&self.out_w.t());
        if let Some(mask) = dropout_mask {
            da *= mask;
        }
        let mut g_hw: Vec<Array2<f64>> = Vec::with_capacity(self.config.layers);
        let mut g_hb: Vec<Array1<f64>> = Vec::with_capacity(self.config.layers);
        for l in (0..self.config.layers).rev() {
            // act' from post-activation values.
            let mut dz = da;
            match self.config.activation {
                Activation::Relu => {
                    dz.zip_mut_with(&acts[l + 1], |d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                }
                Activation::Tanh => {
                    dz.zip_mut_with(&acts[l + 1], |d, &a| *d *= 1.0 - a * a);
                }
            }
            g_hw.push(acts[l].t().dot(&dz));
            g_hb.push(dz.sum_axis(Axis(0)));
            da = dz.dot(&self.hidden_w[l].t());
        }
        g_hw.reverse();
        g_hb.reverse();
        (
            Grads {
                hidden_w: g_hw,
                hidden_b: g_hb,
                out_w: g_out_w,
                out_b: g_out_b,
            },
            loss_sum,
        )
    }

    /// Mini-batch gradients computed over fixed chunks in parallel and
    /// reduced in index order.
    fn batch_gradients(
        &self,
        x: &ArrayView2<f64>,
        y: &[f64],
        dropout_mask: Option<&ArrayView2<f64>>,
    ) -> (Grads, f64) {
        let rows = x.nrows();
        let inv_total = 1.0 / rows as f64;
        let n_chunks = rows.div_ceil(CHUNK_ROWS);
        if n_chunks == 1 {
            let (g, loss_sum) = self.forward_backward(x, y, dropout_mask, inv_total);
            return (g, loss_sum * inv_total);
        }
        let parts: Vec<(Grads, f64)> = (0..n_chunks)
            .into_par_iter()
            .map(|ci| {
                let lo = ci * CHUNK_ROWS;
                let hi = (lo + CHUNK_ROWS).min(rows);
                let mask_slice = dropout_mask.map(|m| m.slice(s![lo..hi, ..]));
                self.forward_backward(
                    &x.slice(s![lo..hi, ..]),
                    &y[lo..hi],
                    mask_slice.as_ref(),
                    inv_total,
                )
            })
            .collect();
        let mut iter = parts.into_iter();
        let (mut acc, mut loss_sum) = iter.next().expect("at least one chunk");
        for (g, l) in iter {
            acc.add_assign(&g);
            loss_sum += l;
        }
        (acc, loss_sum * inv_total)
    }

    /// Classification accuracy with the 0.5 probability threshold
    /// (>= 0.5 predicts class 1).
    pub fn accuracy(&self, x: &ArrayView2<f64>, y: &[f64]) -> Result<f64> {
        if y.is_empty() {
            return Err(Error::invalid("accuracy needs a nonempty set"));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                got: x.nrows(),
            });
        }
        let p = self.predict_proba(x)?;
        let correct = p
            .iter()
            .zip(y)
            .filter(|(pi, &yi)| (**pi >= 0.5) == (yi > 0.5))
            .count();
        Ok(correct as f64 / y.len() as f64)
    }

    /// Cross-entropy training per the configured regimen. Labels must be
    /// 0/1. Returns the checkpoint trace; the model is updated in place.
    pub fn train(&mut self, x: &Array2<f64>, y: &Array1<f64>) -> Result<TrainTrace> {
        let cfg = self.config.clone();
        cfg.validate()?;
        self.check_input(&x.view())?;
        let n = x.nrows();
        if n == 0 {
            return Err(Error::invalid("training set is empty"));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: y.len(),
            });
        }
        for &v in y.iter() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::invalid(format!("labels must be 0 or 1, got {v}")));
            }
        }
        let y_slice: Vec<f64> = y.to_vec();
        let mut rng = seed::rng_from_seed(seed::derive_labeled(cfg.seed, "mlp-train", 0));
        let mut order: Vec<usize> = (0..n).collect();
        let mut cursor = n; // force a shuffle on first use
        let batch = cfg.batch_size.min(n);
        let mut xbatch = Array2::zeros((batch, cfg.input_width));
        let mut ybatch = vec![0.0; batch];
        let mut opt = OptimizerState::new(&cfg, self);
        let mut checkpoints: Vec<TraceCheckpoint> = Vec::new();
        let mut recent: Vec<i64> = Vec::new();
        let mut stop_reason = StopReason::MaxIterations;
        let digits_scale = 10f64.powi(cfg.stop_digits as i32);

        for iter in 1..=cfg.max_iterations {
            if cursor + batch > n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            for (row, &idx) in order[cursor..cursor + batch].iter().enumerate() {
                xbatch.row_mut(row).assign(&x.row(idx));
                ybatch[row] = y_slice[idx];
            }
            cursor += batch;
            let mask = if cfg.dropout_rate > 0.0 {
                Some(draw_dropout_mask(
                    batch,
                    cfg.hidden,
                    cfg.dropout_rate,
                    &mut rng,
                ))
            } else {
                None
            };
            let mask_view = mask.as_ref().map(|m| m.view());
            let (grads, batch_loss) =
                self.batch_gradients(&xbatch.view(), &ybatch, mask_view.as_ref());
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { iteration: iter });
            }
            opt.apply(self, &grads, &cfg);
            self.trained_iterations += 1;

            if iter % cfg.checkpoint_every == 0 {
                let acc = self.accuracy(&x.view(), &y_slice)?;
                let loss = self.loss(&x.view(), &y_slice)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { iteration: iter });
                }
                checkpoints.push(TraceCheckpoint {
                    iteration: iter,
                    training_loss: loss,
                    training_accuracy: acc,
                });
                if cfg.stop_window > 0 {
                    recent.push((acc * digits_scale).round() as i64);
                    if recent.len() > cfg.stop_window {
                        recent.remove(0);
                    }
                    if recent.len() == cfg.stop_window
                        && recent.iter().all(|&v| v == recent[0])
                    {
                        stop_reason = StopReason::Plateau;
                        break;
                    }
                }
            }
        }
        Ok(TrainTrace {
            checkpoints,
            stop_reason,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            config: self.config.clone(),
            trained_iterations: self.trained_iterations,
            hidden_w: self
                .hidden_w
                .iter()
                .map(|w| w.iter().copied().collect())
                .collect(),
            hidden_b: self
                .hidden_b
                .iter()
                .map(|b| b.iter().copied().collect())
                .collect(),
            out_w: self.out_w.iter().copied().collect(),
            out_b: self.out_b.iter().copied().collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Parses and validates a checkpoint document.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_slice(bytes)?;
        if file.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint schema {}",
                file.schema_version
            )));
        }
        file.config.validate().map_err(|e| {
            Error::Format(format!("checkpoint config invalid: {e}"))
        })?;
        let cfg = &file.config;
        if file.hidden_w.len() != cfg.layers || file.hidden_b.len() != cfg.layers {
            return Err(Error::Format("layer count mismatch in checkpoint".into()));
        }
        let mut hidden_w = Vec::with_capacity(cfg.layers);
        let mut hidden_b = Vec::with_capacity(cfg.layers);
        let mut fan_in = cfg.input_width;
        for (l, (w, b)) in file.hidden_w.iter().zip(&file.hidden_b).enumerate() {
            if w.len() != fan_in * cfg.hidden {
                return Err(Error::Format(format!(
                    "layer {l} weight count {} does not match {}x{}",
                    w.len(),
                    fan_in,
                    cfg.hidden
                )));
            }
            if b.len() != cfg.hidden {
                return Err(Error::Format(format!("layer {l} bias count mismatch")));
            }
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("layer {l} has non-finite values")));
            }
            hidden_w.push(
                Array2::from_shape_vec((fan_in, cfg.hidden), w.clone())
                    .map_err(|e| Error::Format(e.to_string()))?,
            );
            hidden_b.push(Array1::from_vec(b.clone()));
            fan_in = cfg.hidden;
        }
        if file.out_w.len() != cfg.hidden * 2 || file.out_b.len() != 2 {
            return Err(Error::Format("output layer shape mismatch".into()));
        }
        if file
            .out_w
            .iter()
            .chain(file.out_b.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Format("output layer has non-finite values".into()));
        }
        Ok(MlpModel {
            out_w: Array2::from_shape_vec((cfg.hidden, 2), file.out_w)
                .map_err(|e| Error::Format(e.to_string()))?,
            out_b: Array1::from_vec(file.out_b),
            config: file.config,
            hidden_w,
            hidden_b,
            trained_iterations: file.trained_iterations,
        })
    }

    /// Flat view of all parameters for the finite-difference oracle.
    pub fn parameter_count(&self) -> usize {
        self.weight_element_count() + self.bias_element_count()
    }

    pub fn get_parameter(&self, index: usize) -> f64 {
        self.map_parameter(index, |v| v)
    }

    pub fn set_parameter(&mut self, index: usize, value: f64) {
        self.map_parameter_mut(index, |v| *v = value);
    }

    fn map_parameter<T>(&self, mut index: usize, f: impl FnOnce(f64) -> T) -> T {
        for w in &self.hidden_w {
            if index < w.len() {
                return f(*w.as_slice().expect("contiguous").get(index).unwrap());
            }
            index -= w.len();
        }
        for b in &self.hidden_b {
            if index < b.len() {
                return f(b[index]);
            }
            index -= b.len();
        }
        if index < self.out_w.len() {
            return f(*self.out_w.as_slice().expect("contiguous").get(index).unwrap());
        }
        index -= self.out_w.len();
        f(self.out_b[index])
    }

    fn map_parameter_mut(&mut self, mut index: usize, f: impl FnOnce(&mut f64)) {
        for w in &mut self.hidden_w {
            if index < w.len() {
                f(w.as_slice_mut().expect("contiguous").get_mut(index).unwrap());
                return;
            }
            index -= w.len();
        }
        for b in &mut self.hidden_b {
            if index < b.len() {
                f(&mut b[index]);
                return;
            }
            index -= b.len();
        }
        if index < self.out_w.len() {
            f(self
                .out_w
                .as_slice_mut()
                .expect("contiguous")
                .get_mut(index)
                .unwrap());
            return;
        }
        index -= self.out_w.len();
        f(&mut self.out_b[index]);
    }

    /// Pre-activation sign pattern of every hidden unit over a batch; the
    /// gradient oracle uses it to detect ReLU kink crossings.
    pub fn activation_signature(&self, x: &ArrayView2<f64>) -> Vec<bool> {
        let (acts, _, _) = self.forward_cache(x, None);
        acts[1..]
            .iter()
            .flat_map(|a| a.iter().map(|&v| v > 0.0))
            .collect()
    }
}

/// Parameter-shaped gradient bundle.
#[derive(Debug, Clone)]
pub struct Grads {
    pub hidden_w: Vec<Array2<f64>>,
    pub hidden_b: Vec<Array1<f64>>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

impl Grads {
    fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.hidden_w.iter_mut().zip(&other.hidden_w) {
            *a += b;
        }
        for (a, b) in self.hidden_b.iter_mut().zip(&other.hidden_b) {
            *a += b;
        }
        self.out_w += &other.out_w;
        self.out_b += &other.out_b;
    }

    pub fn get(&self, mut index: usize) -> f64 {
        for w in &self.hidden_w {
            if index < w.len() {
                return w.as_slice().expect("contiguous")[index];
            }
            index -= w.len();
        }
        for b in &self.hidden_b {
            if index < b.len() {
                return b[index];
            }
            index -= b.len();
        }
        if index < self.out_w.len() {
            return self.out_w.as_slice().expect("contiguous")[index];
        }
        index -= self.out_w.len();
        self.out_b[index]
    }
}

enum OptimizerState {
    Sgd,
    Adam {
        m: Grads,
        v: Grads,
        t: u64,
    },
}

impl OptimizerState {
    fn new(cfg: &MlpConfig, model: &MlpModel) -> Self {
        match cfg.optimizer {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Adam => {
                let zero = Grads {
                    hidden_w: model.hidden_w.iter().map(|w| Array2::zeros(w.dim())).collect(),
                    hidden_b: model.hidden_b.iter().map(|b| Array1::zeros(b.len())).collect(),
                    out_w: Array2::zeros(model.out_w.dim()),
                    out_b: Array1::zeros(model.out_b.len()),
                };
                OptimizerState::Adam {
                    m: zero.clone(),
                    v: zero,
                    t: 0,
                }
            }
        }
    }

    fn apply(&mut self, model: &mut MlpModel, grads: &Grads, cfg: &MlpConfig) {
        let lr = cfg.learning_rate;
        match self {
            OptimizerState::Sgd => {
                for (w, g) in model.hidden_w.iter_mut().zip(&grads.hidden_w) {
                    w.zip_mut_with(g, |a, &b| *a -= lr * b);
                }
                for (b, g) in model.hidden_b.iter_mut().zip(&grads.hidden_b) {
                    b.zip_mut_with(g, |a, &g| *a -= lr * g);
                }
                model.out_w.zip_mut_with(&grads.out_w, |a, &b| *a -= lr * b);
                model.out_b.zip_mut_with(&grads.out_b, |a, &b| *a -= lr * b);
            }
            OptimizerState::Adam { m, v, t } => {
                *t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(*t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(*t as i32);
                let update = |w: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                };
                for ((w, g), (ms, vs)) in model
                    .hidden_w
                    .iter_mut()
                    .zip(&grads.hidden_w)
                    .zip(m.hidden_w.iter_mut().zip(v.hidden_w.iter_mut()))
                {
                    let w = w.as_slice_mut().expect("contiguous");
                    let g = g.as_slice().expect("contiguous");
                    let ms = ms.as_slice_mut().expect("contiguous");
                    let vs = vs.as_slice_mut().expect("contiguous");
                    for i in 0..w.len() {
                        update(&mut w[i], g[i], &mut ms[i], &mut vs[i]);
                    }
                }
                for ((b, g), (ms, vs)) in model
                    .hidden_b
                    .iter_mut()
                    .zip(&grads.hidden_b)
                    .zip(m.hidden_b.iter_mut().zip(v.hidden_b.iter_mut()))
                {
                    for i in 0..b.len() {
                        update(&mut b[i], g[i], &mut ms[i], &mut vs[i]);
                    }
                }
                {
                    let w = model.out_w.as_slice_mut().expect("contiguous");
                    let g = grads.out_w.as_slice().expect("contiguous");
                    let ms = m.out_w.as_slice_mut().expect("contiguous");
                    let vs = v.out_w.as_slice_mut().expect("contiguous");
                    for i in 0..w.len() {
                        update(&mut w[i], g[i], &mut ms[i], &mut vs[i]);
                    }
                }
                for i in 0..model.out_b.len() {
                    update(
                        &mut model.out_b[i],
                        grads.out_b[i],
                        &mut m.out_b[i],
                        &mut v.out_b[i],
                    );
                }
            }
        }
    }
}

/// -ln(q) clamped away from the pole but propagating NaN, so divergence
/// stays detectable.
fn neg_log(q: f64) -> f64 {
    if q.is_nan() {
        f64::NAN
    } else {
        -q.max(1e-300).ln()
    }
}

/// Softmax over the two logits; returns P(class 1).
fn probabilities(logits: &Array2<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(logits.nrows());
    for r in 0..logits.nrows() {
        let z0 = logits[[r, 0]];
        let z1 = logits[[r, 1]];
        let mx = z0.max(z1);
        let e0 = (z0 - mx).exp();
        let e1 = (z1 - mx).exp();
        out[r] = e1 / (e0 + e1);
    }
    out
}

/// Inverted-dropout mask: Bernoulli(keep) scaled by 1/keep.
fn draw_dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut Prng) -> Array2<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.gen::<f64>() < keep {
            scale
        } else {
            0.0
        }
    })
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema_version: u32,
    config: MlpConfig,
    trained_iterations: usize,
    hidden_w: Vec<Vec<f64>>,
    hidden_b: Vec<Vec<f64>>,
    out_w: Vec<f64>,
    out_b: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config(m: usize, layers: usize, hidden: usize, seed: u64) -> MlpConfig {
        let mut cfg = MlpConfig::new(m, layers, hidden, seed);
        cfg.dropout_rate = 0.0;
        cfg.batch_size = 16;
        cfg.checkpoint_every = 50;
        cfg.learning_rate = 1e-2;
        cfg
    }

    #[test]
    fn count_weights_worked_values() {
        assert_eq!(count_weights(&MlpConfig::new(64, 8, 1024, 0)), 7_407_616);
        assert_eq!(count_weights(&MlpConfig::new(64, 12, 2000, 0)), 44_132_000);
        // N = 1: no hidden-to-hidden matrices.
        assert_eq!(count_weights(&MlpConfig::new(64, 1, 32, 0)), 64 * 32 + 64);
    }

    #[test]
    fn built_model_matches_count_weights() {
        for (m, n, k) in [(64, 1, 16), (32, 3, 8), (16, 2, 4)] {
            let cfg = MlpConfig::new(m, n, k, 1);
            let model = MlpModel::build(cfg.clone()).unwrap();
            assert_eq!(model.weight_element_count(), count_weights(&cfg));
            assert_eq!(model.bias_element_count(), count_biases(&cfg));
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = MlpModel::build(MlpConfig::new(16, 2, 8, 9)).unwrap();
        let b = MlpModel::build(MlpConfig::new(16, 2, 8, 9)).unwrap();
        assert_eq!(a, b);
        let c = MlpModel::build(MlpConfig::new(16, 2, 8, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zeroed_model_predicts_half() {
        let model = MlpModel::zeroed(MlpConfig::new(8, 2, 4, 0)).unwrap();
        let x = Array2::from_shape_fn((5, 8), |(r, c)| if (r + c) % 2 == 0 { 1.0 } else { -1.0 });
        let p = model.predict_proba(&x.view()).unwrap();
        for v in p.iter() {
            assert_eq!(*v, 0.5);
        }
    }

    #[test]
    fn probabilities_in_open_interval_and_complementary() {
        let model = MlpModel::build(MlpConfig::new(12, 2, 6, 3)).unwrap();
        let x = Array2::from_shape_fn((40, 12), |(r, c)| {
            if (r * 7 + c * 3) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        });
        let p = model.predict_proba(&x.view()).unwrap();
        for &v in p.iter() {
            assert!(v > 0.0 && v < 1.0);
        }
        // P(1) + P(0) = 1 by construction of the softmax; checked via loss
        // of complemented labels.
        let y1 = vec![1.0; 40];
        let y0 = vec![0.0; 40];
        let l1 = model.loss(&x.view(), &y1).unwrap();
        let l0 = model.loss(&x.view(), &y0).unwrap();
        let mean_p: f64 = p.iter().sum::<f64>() / 40.0;
        assert!(l1.is_finite() && l0.is_finite());
        assert!(mean_p > 0.0 && mean_p < 1.0);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let model = MlpModel::build(MlpConfig::new(12, 2, 6, 3)).unwrap();
        let x = Array2::from_elem((7, 12), 1.0);
        let a = model.predict_proba(&x.view()).unwrap();
        let b = model.predict_proba(&x.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = MlpModel::build(MlpConfig::new(12, 1, 4, 0)).unwrap();
        let x = Array2::zeros((3, 11));
        assert!(model.predict_proba(&x.view()).is_err());
    }

    #[test]
    fn separable_toy_set_plateaus_at_perfect_accuracy() {
        // Labels = sign of the first feature; N = 1 learns it quickly.
        let mut cfg = toy_config(2, 1, 8, 4);
        cfg.max_iterations = 20_000;
        let n = 64;
        let x = Array2::from_shape_fn((n, 2), |(r, c)| {
            let v = if (r * 31 + 17 * c) % 7 < 3 { 1.0 } else { -1.0 };
            if c == 0 {
                v
            } else {
                v * 0.3
            }
        });
        let y = Array1::from_shape_fn(n, |r| if x[[r, 0]] > 0.0 { 1.0 } else { 0.0 });
        let mut model = MlpModel::build(cfg).unwrap();
        let trace = model.train(&x, &y).unwrap();
        assert_eq!(trace.stop_reason, StopReason::Plateau);
        let final_acc = trace.checkpoints.last().unwrap().training_accuracy;
        assert_eq!(final_acc, 1.0);
        // Iterations strictly increasing in the trace.
        for w in trace.checkpoints.windows(2) {
            assert!(w[1].iteration > w[0].iteration);
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let cfg = toy_config(4, 2, 6, 11);
        let x = Array2::from_shape_fn((40, 4), |(r, c)| if (r + c) % 3 == 0 { 1.0 } else { -1.0 });
        let y = Array1::from_shape_fn(40, |r| (r % 2) as f64);
        let mut m1 = MlpModel::build(cfg.clone()).unwrap();
        let mut m2 = MlpModel::build(cfg).unwrap();
        let mut c1 = m1.config.clone();
        c1.max_iterations = 300;
        m1.config = c1.clone();
        m2.config = c1;
        m1.train(&x, &y).unwrap();
        m2.train(&x, &y).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = toy_config(4, 2, 8, 2);
        cfg.optimizer = Optimizer::Sgd;
        cfg.learning_rate = 1e308; // blows up immediately
        cfg.max_iterations = 50;
        cfg.stop_window = 0;
        // Identical rows with conflicting labels: saturation can never be
        // simultaneously correct, so updates keep escalating to overflow.
        let x = Array2::from_elem((32, 4), 1.0);
        let y = Array1::from_shape_fn(32, |r| (r % 2) as f64);
        let mut model = MlpModel::build(cfg).unwrap();
        match model.train(&x, &y) {
            Err(Error::Divergence { iteration }) => assert!(iteration >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_training_set_rejected() {
        let mut model = MlpModel::build(toy_config(4, 1, 4, 0)).unwrap();
        let x = Array2::zeros((0, 4));
        let y = Array1::zeros(0);
        assert!(model.train(&x, &y).is_err());
    }

    #[test]
    fn bad_labels_rejected() {
        let mut model = MlpModel::build(toy_config(4, 1, 4, 0)).unwrap();
        let x = Array2::zeros((3, 4));
        let y = Array1::from_vec(vec![0.0, 1.0, 0.5]);
        assert!(model.train(&x, &y).is_err());
    }

    #[test]
    fn accuracy_properties() {
        let model = MlpModel::build(MlpConfig::new(6, 1, 4, 5)).unwrap();
        let x = Array2::from_shape_fn((30, 6), |(r, c)| {
            if (r * 5 + c) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        });
        let y: Vec<f64> = (0..30).map(|r| (r % 2) as f64).collect();
        let yc: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        let a = model.accuracy(&x.view(), &y).unwrap();
        let ac = model.accuracy(&x.view(), &yc).unwrap();
        assert!((a + ac - 1.0).abs() < 1e-12, "complement law");
        // Permutation invariance.
        let perm: Vec<usize> = (0..30).rev().collect();
        let xp = Array2::from_shape_fn((30, 6), |(r, c)| x[[perm[r], c]]);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        assert_eq!(model.accuracy(&xp.view(), &yp).unwrap(), a);
        assert!(model.accuracy(&x.view(), &[]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut model = MlpModel::build(toy_config(6, 2, 5, 8)).unwrap();
        let x = Array2::from_shape_fn((24, 6), |(r, c)| ((r * c) % 3) as f64 - 1.0);
        let y = Array1::from_shape_fn(24, |r| (r % 2) as f64);
        let mut cfg = model.config.clone();
        cfg.max_iterations = 120;
        model.config = cfg;
        model.train(&x, &y).unwrap();
        let json = model.to_json().unwrap();
        let back = MlpModel::from_json(json.as_bytes()).unwrap();
        assert_eq!(back, model);
        assert!(MlpModel::from_json(b"{}").is_err());
        assert!(MlpModel::from_json(b"garbage").is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let trace = TrainTrace {
            checkpoints: vec![
                TraceCheckpoint {
                    iteration: 1000,
                    training_loss: 0.5,
                    training_accuracy: 0.75,
                },
                TraceCheckpoint {
                    iteration: 2000,
                    training_loss: 0.25,
                    training_accuracy: 0.875,
                },
            ],
            stop_reason: StopReason::MaxIterations,
        };
        let csv = trace.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("iteration,loss,accuracy\n"));
    }
}
