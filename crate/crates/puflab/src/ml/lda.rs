//! Two-class linear discriminant analysis for separability screening.
//!
//! Projects ±1-encoded challenges onto the Fisher direction
//! `(S_W + lambda*I)^-1 (mu1 - mu0)` and reports how much the class-
//! conditional densities of the projection overlap. Heavily overlapping
//! densities mean no linear classifier can split the classes.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub const LDA_BINS: usize = 64;
pub const LDA_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaResult {
    pub projection: Vec<f64>,
    /// Normalized class-conditional histograms over shared bin edges.
    pub hist0: Vec<f64>,
    pub hist1: Vec<f64>,
    pub bin_min: f64,
    pub bin_width: f64,
    /// Sum over bins of min(p0, p1); 1 means indistinguishable classes.
    pub overlap_coefficient: f64,
    /// |mu1' - mu0'| / pooled projected std.
    pub dprime: f64,
}

/// Cholesky solve of the symmetric positive definite system `a x = b`.
/// `a` is consumed as workspace.
fn spd_solve(mut a: Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::invalid("spd_solve needs a square system"));
    }
    // In-place lower Cholesky.
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::Numerical(format!(
                "scatter matrix not positive definite at pivot {j}"
            )));
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / d;
        }
    }
    // Forward then back substitution.
    let mut x = b.clone();
    for i in 0..n {
        for k in 0..i {
            let t = x[k];
            x[i] -= a[[i, k]] * t;
        }
        x[i] /= a[[i, i]];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let t = x[k];
            x[i] -= a[[k, i]] * t;
        }
        x[i] /= a[[i, i]];
    }
    Ok(x)
}

/// Fits the discriminant on ±1 features with boolean class labels.
pub fn fit_lda(x: &ArrayView2<f64>, y: &[bool]) -> Result<LdaResult> {
    let n = x.nrows();
    let m = x.ncols();
    if n == 0 || m == 0 {
        return Err(Error::invalid("LDA needs a nonempty dataset"));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    let n1 = y.iter().filter(|&&b| b).count();
    let n0 = n - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::invalid("LDA needs both classes present"));
    }
    let mut mu0 = Array1::<f64>::zeros(m);
    let mut mu1 = Array1::<f64>::zeros(m);
    for (row, &label) in x.rows().into_iter().zip(y) {
        if label {
            mu1 += &row;
        } else {
            mu0 += &row;
        }
    }
    mu0 /= n0 as f64;
    mu1 /= n1 as f64;

    // Pooled within-class scatter sum_c sum_i (x - mu_c)(x - mu_c)^T,
    // accumulated as X_c^T X_c - n_c mu_c mu_c^T.
    let mut scatter = Array2::<f64>::zeros((m, m));
    {
        let xt_x = x.t().dot(x);
        scatter += &xt_x;
        for i in 0..m {
            for j in 0..m {
                scatter[[i, j]] -=
                    n0 as f64 * mu0[i] * mu0[j] + n1 as f64 * mu1[i] * mu1[j];
            }
        }
    }
    for i in 0..m {
        scatter[[i, i]] += LDA_RIDGE;
    }
    let w = spd_solve(scatter, &(&mu1 - &mu0))?;

    // Project and histogram.
    let proj = x.dot(&w);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &p in proj.iter() {
        lo = lo.min(p);
        hi = hi.max(p);
    }
    let width = if hi > lo {
        (hi - lo) / LDA_BINS as f64
    } else {
        0.0
    };
    let mut hist0 = vec![0.0; LDA_BINS];
    let mut hist1 = vec![0.0; LDA_BINS];
    for (&p, &label) in proj.iter().zip(y) {
        let bin = if width == 0.0 {
            0
        } else {
            (((p - lo) / width) as usize).min(LDA_BINS - 1)
        };
        if label {
            hist1[bin] += 1.0;
        } else {
            hist0[bin] += 1.0;
        }
    }
    for v in hist0.iter_mut() {
        *v /= n0 as f64;
    }
    for v in hist1.iter_mut() {
        *v /= n1 as f64;
    }
    let overlap_coefficient: f64 = hist0
        .iter()
        .zip(&hist1)
        .map(|(a, b)| a.min(*b))
        .sum();

    let (mut s0, mut s1, mut q0, mut q1) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &label) in proj.iter().zip(y) {
        if label {
            s1 += p;
            q1 += p * p;
        } else {
            s0 += p;
            q0 += p * p;
        }
    }
    let mean0 = s0 / n0 as f64;
    let mean1 = s1 / n1 as f64;
    let var0 = (q0 / n0 as f64 - mean0 * mean0).max(0.0);
    let var1 = (q1 / n1 as f64 - mean1 * mean1).max(0.0);
    let pooled =
        (((n0 as f64) * var0 + (n1 as f64) * var1) / n as f64).sqrt();
    let dprime = if pooled > 0.0 {
        (mean1 - mean0).abs() / pooled
    } else {
        0.0
    };

    Ok(LdaResult {
        projection: w.to_vec(),
        hist0,
        hist1,
        bin_min: lo,
        bin_width: width,
        overlap_coefficient,
        dprime,
    })
}
