//! Soft-margin SVM with a polynomial kernel, solved by sequential minimal
//! optimization (Platt-style pair selection with an error cache and an LRU
//! kernel-row cache).
//!
//! Kernel: k(u, v) = (u.v / m + 1)^degree over ±1-encoded challenges.

use crate::error::{Error, Result};
use crate::seed::{self, Prng};
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use std::collections::HashMap;

pub const DEFAULT_SVM_CAP: usize = 10_000;
const ALPHA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams {
    pub degree: u32,
    pub c: f64,
    /// KKT tolerance.
    pub tol: f64,
    /// Training-set size cap; the kernel working set must fit in memory.
    pub cap: usize,
    /// Outer-sweep budget before declaring non-convergence.
    pub max_sweeps: usize,
    /// LRU kernel cache size in rows.
    pub cache_rows: usize,
    pub seed: u64,
}

impl SvmParams {
    pub fn new(degree: u32, c: f64) -> Self {
        SvmParams {
            degree,
            c,
            tol: 1e-3,
            cap: DEFAULT_SVM_CAP,
            max_sweeps: 20_000,
            cache_rows: 1024,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.degree == 0 {
            return Err(Error::invalid("kernel degree must be >= 1"));
        }
        if !self.c.is_finite() || self.c <= 0.0 {
            return Err(Error::invalid("C must be positive and finite"));
        }
        if self.tol <= 0.0 {
            return Err(Error::invalid("tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    support_x: Array2<f64>,
    /// alpha_i * y_i per support vector.
    dual_coef: Vec<f64>,
    intercept: f64,
    degree: u32,
    c: f64,
    m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmDiagnostics {
    pub alphas: Vec<f64>,
    pub sweeps: usize,
    pub support_vectors: usize,
    /// Largest KKT violation (beyond tol) at termination.
    pub kkt_violation: f64,
}

impl SvmModel {
    pub fn support_vector_count(&self) -> usize {
        self.dual_coef.len()
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    /// Decision value f(x); class 1 iff f(x) >= 0.
    pub fn decision(&self, x: &ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: x.len(),
            });
        }
        let dots = self.support_x.dot(x);
        let mut f = self.intercept;
        for (coef, d) in self.dual_coef.iter().zip(dots.iter()) {
            f += coef * poly(*d, self.m, self.degree);
        }
        Ok(f)
    }

    pub fn predict(&self, x: &ArrayView2<f64>) -> Result<Vec<bool>> {
        if x.ncols() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: x.ncols(),
            });
        }
        let mut out = Vec::with_capacity(x.nrows());
        for row in x.rows() {
            out.push(self.decision(&row)? >= 0.0);
        }
        Ok(out)
    }

    pub fn accuracy(&self, x: &ArrayView2<f64>, y: &[bool]) -> Result<f64> {
        if y.is_empty() {
            return Err(Error::invalid("accuracy needs a nonempty set"));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                got: x.nrows(),
            });
        }
        let pred = self.predict(x)?;
        Ok(pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64)
    }
}

#[inline]
fn poly(dot: f64, m: usize, degree: u32) -> f64 {
    (dot / m as f64 + 1.0).powi(degree as i32)
}

struct KernelCache<'a> {
    x: ArrayView2<'a, f64>,
    degree: u32,
    rows: HashMap<usize, (Vec<f64>, u64)>,
    capacity: usize,
    clock: u64,
    hits: u64,
    misses: u64,
}

impl<'a> KernelCache<'a> {
    fn new(x: ArrayView2<'a, f64>, degree: u32, capacity: usize) -> Self {
        KernelCache {
            x,
            degree,
            rows: HashMap::with_capacity(capacity.min(4096)),
            capacity: capacity.max(2),
            clock: 0,
            hits: 0,
            misses: 0,
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        self.clock += 1;
        let clock = self.clock;
        if self.rows.contains_key(&i) {
            self.hits += 1;
            let entry = self.rows.get_mut(&i).expect("present");
            entry.1 = clock;
            return &entry.0;
        }
        self.misses += 1;
        if self.rows.len() >= self.capacity {
            // Evict the least recently used row.
            let victim = *self
                .rows
                .iter()
                .min_by_key(|(_, (_, stamp))| *stamp)
                .map(|(k, _)| k)
                .expect("cache nonempty");
            self.rows.remove(&victim);
        }
        let m = self.x.ncols();
        let dots = self.x.dot(&self.x.row(i));
        let row: Vec<f64> = dots.iter().map(|&d| poly(d, m, self.degree)).collect();
        self.rows.insert(i, (row, clock));
        &self.rows.get(&i).expect("just inserted").0
    }
}

/// Trains on ±1 labels derived from the bools. Fails if the set exceeds the
/// cap, is single-class, or the optimizer exhausts its sweep budget.
pub fn train_svm_poly(
    x: &ArrayView2<f64>,
    y: &[bool],
    params: &SvmParams,
) -> Result<(SvmModel, SvmDiagnostics)> {
    params.validate()?;
    let n = x.nrows();
    if n == 0 || y.is_empty() {
        return Err(Error::invalid("SVM training set is empty"));
    }
    if n != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: n,
        });
    }
    if n > params.cap {
        return Err(Error::Size(format!(
            "SVM training set of {n} exceeds cap {}",
            params.cap
        )));
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::invalid("SVM training needs both classes"));
    }
    let m = x.ncols();
    let labels: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    let mut solver = Smo {
        y: &labels,
        alpha: vec![0.0; n],
        errors: labels.iter().map(|&v| -v).collect(),
        b: 0.0,
        c: params.c,
        tol: params.tol,
        cache: KernelCache::new(x.view(), params.degree, params.cache_rows),
        rng: seed::rng_from_seed(seed::derive_labeled(params.seed, "smo", 0)),
        diag: {
            let mut d = Vec::with_capacity(n);
            for row in x.rows() {
                d.push(poly(row.dot(&row), m, params.degree));
            }
            d
        },
    };
    let sweeps = solver.run(params.max_sweeps)?;

    let mut support_rows = Vec::new();
    let mut dual_coef = Vec::new();
    for i in 0..n {
        if solver.alpha[i] > ALPHA_EPS {
            support_rows.push(i);
            dual_coef.push(solver.alpha[i] * labels[i]);
        }
    }
    let mut support_x = Array2::zeros((support_rows.len(), m));
    for (r, &i) in support_rows.iter().enumerate() {
        support_x.row_mut(r).assign(&x.row(i));
    }
    let kkt_violation = solver.max_kkt_violation();
    let diagnostics = SvmDiagnostics {
        alphas: solver.alpha.clone(),
        sweeps,
        support_vectors: support_rows.len(),
        kkt_violation,
    };
    Ok((
        SvmModel {
            support_x,
            dual_coef,
            intercept: solver.b,
            degree: params.degree,
            c: params.c,
            m,
        },
        diagnostics,
    ))
}

struct Smo<'a> {
    y: &'a [f64],
    alpha: Vec<f64>,
    /// E_i = f(x_i) - y_i, maintained incrementally.
    errors: Vec<f64>,
    b: f64,
    c: f64,
    tol: f64,
    cache: KernelCache<'a>,
    rng: Prng,
    /// Kernel diagonal.
    diag: Vec<f64>,
}

impl<'a> Smo<'a> {
    fn run(&mut self, max_sweeps: usize) -> Result<usize> {
        let n = self.alpha.len();
        let mut examine_all = true;
        let mut num_changed = 1usize;
        let mut sweeps = 0usize;
        while num_changed > 0 || examine_all {
            sweeps += 1;
            if sweeps > max_sweeps {
                return Err(Error::Optimizer(format!(
                    "SMO did not converge: {sweeps} sweeps, {} support vectors, \
                     max KKT violation {:.3e}",
                    self.alpha.iter().filter(|&&a| a > ALPHA_EPS).count(),
                    self.max_kkt_violation()
                )));
            }
            num_changed = 0;
            if examine_all {
                for i in 0..n {
                    num_changed += self.examine(i)? as usize;
                }
            } else {
                for i in 0..n {
                    if self.is_non_bound(i) {
                        num_changed += self.examine(i)? as usize;
                    }
                }
            }
            if examine_all {
                examine_all = false;
            } else if num_changed == 0 {
                examine_all = true;
            }
        }
        Ok(sweeps)
    }

    #[inline]
    fn is_non_bound(&self, i: usize) -> bool {
        self.alpha[i] > ALPHA_EPS && self.alpha[i] < self.c - ALPHA_EPS
    }

    fn examine(&mut self, i2: usize) -> Result<bool> {
        let y2 = self.y[i2];
        let alpha2 = self.alpha[i2];
        let e2 = self.errors[i2];
        let r2 = e2 * y2;
        let violates = (r2 < -self.tol && alpha2 < self.c - ALPHA_EPS)
            || (r2 > self.tol && alpha2 > ALPHA_EPS);
        if !violates {
            return Ok(false);
        }
        let n = self.alpha.len();
        // Second-choice heuristic: largest |E1 - E2| among non-bound points.
        let mut best = None;
        let mut best_gap = -1.0;
        for i in 0..n {
            if self.is_non_bound(i) {
                let gap = (self.errors[i] - e2).abs();
                if gap > best_gap {
                    best_gap = gap;
                    best = Some(i);
                }
            }
        }
        if let Some(i1) = best {
            if self.take_step(i1, i2)? {
                return Ok(true);
            }
        }
        // Fall back to scanning non-bound points from a random start.
        let start = self.rng.gen_range(0..n);
        for off in 0..n {
            let i1 = (start + off) % n;
            if self.is_non_bound(i1) && self.take_step(i1, i2)? {
                return Ok(true);
            }
        }
        // Finally scan everything.
        let start = self.rng.gen_range(0..n);
        for off in 0..n {
            let i1 = (start + off) % n;
            if self.take_step(i1, i2)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> Result<bool> {
        if i1 == i2 {
            return Ok(false);
        }
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let (a1_old, a2_old) = (self.alpha[i1], self.alpha[i2]);
        let (e1, e2) = (self.errors[i1], self.errors[i2]);
        let s = y1 * y2;
        let (lo, hi) = if s > 0.0 {
            let sum = a1_old + a2_old;
            ((sum - self.c).max(0.0), sum.min(self.c))
        } else {
            let diff = a2_old - a1_old;
            (diff.max(0.0), (self.c + diff).min(self.c))
        };
        if hi - lo < ALPHA_EPS {
            return Ok(false);
        }
        let k11 = self.diag[i1];
        let k22 = self.diag[i2];
        let k12 = self.cache.row(i1)[i2];
        let eta = k11 + k22 - 2.0 * k12;
        let mut a2 = if eta > 1e-12 {
            (a2_old + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            // Degenerate curvature: evaluate the objective at both ends.
            let f1 = y1 * (e1 - self.b) - a1_old * k11 - s * a2_old * k12;
            let f2 = y2 * (e2 - self.b) - s * a1_old * k12 - a2_old * k22;
            let l1 = a1_old + s * (a2_old - lo);
            let h1 = a1_old + s * (a2_old - hi);
            let obj_lo = l1 * f1 + lo * f2 + 0.5 * l1 * l1 * k11 + 0.5 * lo * lo * k22
                + s * lo * l1 * k12;
            let obj_hi = h1 * f1 + hi * f2 + 0.5 * h1 * h1 * k11 + 0.5 * hi * hi * k22
                + s * hi * h1 * k12;
            if obj_lo < obj_hi - 1e-12 {
                lo
            } else if obj_hi < obj_lo - 1e-12 {
                hi
            } else {
                return Ok(false);
            }
        };
        if (a2 - a2_old).abs() < ALPHA_EPS * (a2 + a2_old + ALPHA_EPS) {
            return Ok(false);
        }
        if a2 < ALPHA_EPS {
            a2 = 0.0;
        } else if a2 > self.c - ALPHA_EPS {
            a2 = self.c;
        }
        let a1 = a1_old + s * (a2_old - a2);
        let a1 = a1.clamp(0.0, self.c);
        let d1 = a1 - a1_old;
        let d2 = a2 - a2_old;

        let b1 = self.b - e1 - y1 * d1 * k11 - y2 * d2 * k12;
        let b2 = self.b - e2 - y1 * d1 * k12 - y2 * d2 * k22;
        let b_new = if a1 > ALPHA_EPS && a1 < self.c - ALPHA_EPS {
            b1
        } else if a2 > ALPHA_EPS && a2 < self.c - ALPHA_EPS {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let db = b_new - self.b;
        self.b = b_new;
        self.alpha[i1] = a1;
        self.alpha[i2] = a2;

        // Update the error cache in one pass over both kernel rows.
        {
            let row1: Vec<f64> = self.cache.row(i1).to_vec();
            let row2 = self.cache.row(i2);
            for ((err, &k1), &k2) in self.errors.iter_mut().zip(&row1).zip(row2) {
                *err += y1 * d1 * k1 + y2 * d2 * k2 + db;
            }
        }
        // Non-bound updated points sit on the margin exactly.
        if self.is_non_bound(i1) {
            self.errors[i1] = 0.0;
        }
        if self.is_non_bound(i2) {
            self.errors[i2] = 0.0;
        }
        Ok(true)
    }

    /// Largest KKT violation beyond tol over all points.
    fn max_kkt_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.alpha.len() {
            let margin = self.y[i] * (self.errors[i] + self.y[i]);
            let viol = if self.alpha[i] <= ALPHA_EPS {
                1.0 - margin - self.tol
            } else if self.alpha[i] >= self.c - ALPHA_EPS {
                margin - 1.0 - self.tol
            } else {
                (margin - 1.0).abs() - self.tol
            };
            worst = worst.max(viol);
        }
        worst.max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridChoice {
    pub degree: u32,
    pub c: f64,
    pub validation_accuracy: f64,
}

/// Grid search over (degree, C): highest validation accuracy wins, ties
/// prefer the smaller C, then the smaller degree.
pub fn grid_search_svm(
    train_x: &ArrayView2<f64>,
    train_y: &[bool],
    val_x: &ArrayView2<f64>,
    val_y: &[bool],
    degrees: &[u32],
    cs: &[f64],
    base: &SvmParams,
) -> Result<GridChoice> {
    if degrees.is_empty() || cs.is_empty() {
        return Err(Error::invalid("grid search needs nonempty grids"));
    }
    let mut best: Option<GridChoice> = None;
    for &degree in degrees {
        for &c in cs {
            let mut params = base.clone();
            params.degree = degree;
            params.c = c;
            let (model, _) = train_svm_poly(train_x, train_y, &params)?;
            let acc = model.accuracy(val_x, val_y)?;
            let candidate = GridChoice {
                degree,
                c,
                validation_accuracy: acc,
            };
            best = Some(match best {
                None => candidate,
                Some(prev) => {
                    if acc > prev.validation_accuracy + 1e-12
                        || ((acc - prev.validation_accuracy).abs() <= 1e-12
                            && (c < prev.c || (c == prev.c && degree < prev.degree)))
                    {
                        candidate
                    } else {
                        prev
                    }
                }
            });
        }
    }
    Ok(best.expect("nonempty grid"))
}
