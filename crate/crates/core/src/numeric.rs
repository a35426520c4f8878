//! Small numerical helpers shared across modules: compensated summation,
//! streaming moments and SVD-based pseudo-inverses.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold (on squared singular values, i.e. Gram eigenvalues)
/// below which a direction counts as numerically zero for rank decisions.
pub const RANK_REL_TOL: f64 = 1e-12;

/// Relative threshold used when a projected Gram matrix must be
/// pseudo-inverted.
pub const PINV_REL_TOL: f64 = 1e-10;

/// Double-double accumulator (Knuth two-sum / Dekker split-free variant).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    pub fn new(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    pub fn add(self, x: f64) -> Self {
        let (s, e) = two_sum(self.hi, x);
        let lo = self.lo + e;
        let (hi, lo) = quick_two_sum(s, lo);
        Self { hi, lo }
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

/// Sum in double-double precision, rounded once at the end.
pub fn dd_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values
        .into_iter()
        .fold(DoubleDouble::default(), DoubleDouble::add)
        .value()
}

/// Streaming mean/variance (Welford) with an order-fixed merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. pairwise combination. Not commutative in the last bits,
    /// so callers must merge in a fixed order.
    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Count of squared singular values above `rel_tol * max`.
pub fn numerical_rank(singular_values: &DVector<f64>, rel_tol_sq: f64) -> usize {
    let max = singular_values.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    let cutoff = rel_tol_sq * max * max;
    singular_values.iter().filter(|s| *s * *s > cutoff).count()
}

/// Rank of a matrix under the `RANK_REL_TOL` rule.
pub fn matrix_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    numerical_rank(&sv, RANK_REL_TOL)
}

/// Moore–Penrose pseudo-inverse of `a` (shape cols × rows), discarding
/// directions whose squared singular value falls below `rel_tol_sq` times the
/// largest. Also returns the retained rank.
pub fn pseudo_inverse(a: &DMatrix<f64>, rel_tol_sq: f64) -> Result<(DMatrix<f64>, usize)> {
    let (rows, cols) = a.shape();
    let svd = a.clone().svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return V^T".into()))?;
    let sv = &svd.singular_values;
    let rank = numerical_rank(sv, rel_tol_sq);
    let mut pinv = DMatrix::zeros(cols, rows);
    for k in 0..sv.len() {
        let s = sv[k];
        if s == 0.0 || s * s <= rel_tol_sq * sv.max() * sv.max() {
            continue;
        }
        let vk = v_t.row(k).transpose();
        let uk = u.column(k);
        pinv.ger(1.0 / s, &vk, &uk, 1.0);
    }
    Ok((pinv, rank))
}

/// Ensure every entry is finite.
pub fn check_finite<'a, I: IntoIterator<Item = &'a f64>>(values: I, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{what} contains non-finite entries"
        )))
    }
}
