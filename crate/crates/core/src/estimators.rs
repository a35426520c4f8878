//! Least-squares estimators: OLS, ridge, row-compressed OLS, the compressed
//! least-squares estimator (CLSE) and its average over independent
//! projections (ACLSE), plus cross-validated choice of the projection
//! dimension.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::design::{format_f64, DesignMatrix, ResponseVector};
use crate::error::{Error, Result};
use crate::numeric::{matrix_rank, pseudo_inverse, Moments, PINV_REL_TOL, RANK_REL_TOL};
use crate::projections::{
    rng_for, sample_projection, substream_seed, Family, ProjectionOperator, ProjectionSpec,
};
use crate::provenance::Sidecar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ols,
    Ridge,
    RowCompressed,
    Clse,
    Aclse,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Ridge => "ridge",
            Method::RowCompressed => "row",
            Method::Clse => "clse",
            Method::Aclse => "aclse",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ols" => Ok(Method::Ols),
            "ridge" => Ok(Method::Ridge),
            "row" | "row-compressed" => Ok(Method::RowCompressed),
            "clse" => Ok(Method::Clse),
            "aclse" => Ok(Method::Aclse),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

/// What to do when the system to solve is rank deficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankPolicy {
    #[default]
    Reject,
    /// Minimum-norm solution through the pseudo-inverse.
    MinNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Coefficients in the basis of the design that was fitted.
    pub beta_original: DVector<f64>,
    /// `γ̂ ∈ R^d` for a single CLSE fit.
    pub gamma_projected: Option<DVector<f64>>,
    pub method: Method,
    pub d: Option<usize>,
    /// Number of averaged projections; 1 unless ACLSE.
    pub k: usize,
    pub seeds: Vec<u64>,
    pub family: Option<Family>,
    pub lambda: Option<f64>,
    /// `‖Y − Xβ̂‖² / n` on the fitted data.
    pub training_mse: f64,
}

impl FitResult {
    fn new(method: Method, beta: DVector<f64>, x: &DesignMatrix, y: &ResponseVector) -> Self {
        let training_mse = training_mse(x, y, &beta);
        Self {
            beta_original: beta,
            gamma_projected: None,
            method,
            d: None,
            k: 1,
            seeds: Vec::new(),
            family: None,
            lambda: None,
            training_mse,
        }
    }

    /// One coefficient per row under a `beta` header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<coefficients>", e);
        writeln!(out, "beta").map_err(io)?;
        for b in self.beta_original.iter() {
            writeln!(out, "{}", format_f64(*b)).map_err(io)?;
        }
        Ok(())
    }

    pub fn provenance(&self) -> Sidecar {
        let mut s = Sidecar::new();
        s.set("method", self.method)
            .set("p", self.beta_original.len())
            .set("k", self.k);
        if let Some(d) = self.d {
            s.set("d", d);
        }
        if let Some(f) = self.family {
            s.set("family", f);
            if let Family::Sparse { density } = f {
                s.set("density", density);
            }
        }
        if let Some(l) = self.lambda {
            s.set("lambda", l);
        }
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        s.set("seeds", seeds.join(","));
        s.set("training_mse", format_f64(self.training_mse));
        s
    }
}

fn training_mse(x: &DesignMatrix, y: &ResponseVector, beta: &DVector<f64>) -> f64 {
    let resid = y.values() - x.values() * beta;
    resid.norm_squared() / y.len() as f64
}

/// Ordinary least squares via the SVD of `X`.
pub fn ols_fit(x: &DesignMatrix, y: &ResponseVector, policy: RankPolicy) -> Result<FitResult> {
    y.check_matches(x)?;
    let beta = ols_smoother_checked(x.values(), policy)? * y.values();
    Ok(FitResult::new(Method::Ols, beta, x, y))
}

/// `X⁺` (shape `p × n`), rejecting rank deficiency unless allowed.
pub(crate) fn ols_smoother_checked(x: &DMatrix<f64>, policy: RankPolicy) -> Result<DMatrix<f64>> {
    let (pinv, rank) = pseudo_inverse(x, RANK_REL_TOL)?;
    if rank < x.ncols() && policy == RankPolicy::Reject {
        return Err(Error::Singular {
            rank,
            dim: x.ncols(),
        });
    }
    Ok(pinv)
}

/// `β̂ = (XᵀX + λI)⁻¹XᵀY`.
pub fn ridge_fit(x: &DesignMatrix, y: &ResponseVector, lambda: f64) -> Result<FitResult> {
    y.check_matches(x)?;
    let beta = ridge_smoother(x.values(), lambda)? * y.values();
    let mut fit = FitResult::new(Method::Ridge, beta, x, y);
    fit.lambda = Some(lambda);
    Ok(fit)
}

/// `(XᵀX + λI)⁻¹Xᵀ`.
pub(crate) fn ridge_smoother(x: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::invalid(format!(
            "ridge penalty must be finite and >= 0, got {lambda}"
        )));
    }
    let p = x.ncols();
    let mut gram = x.tr_mul(x);
    for i in 0..p {
        gram[(i, i)] += lambda;
    }
    let chol = Cholesky::new(gram).ok_or_else(|| Error::Singular {
        rank: matrix_rank(x),
        dim: p,
    })?;
    Ok(chol.solve(&x.transpose()))
}

fn check_projection_dims(x: &DesignMatrix, op_input: usize, d: usize) -> Result<()> {
    if op_input != x.p() {
        return Err(Error::Dim {
            expected: x.p(),
            found: op_input,
        });
    }
    let rank = x.rank();
    if d > rank {
        return Err(Error::Rank { requested: d, rank });
    }
    Ok(())
}

/// Compressed least squares: `β̂ = φ·argmin_γ ‖Y − Xφγ‖²`.
pub fn clse_fit(x: &DesignMatrix, y: &ResponseVector, spec: &ProjectionSpec) -> Result<FitResult> {
    y.check_matches(x)?;
    check_projection_dims(x, spec.input_dim, spec.output_dim)?;
    let op = sample_projection(spec)?;
    clse_fit_with(x, y, &op, None)
}

/// CLSE with a ridge penalty on `γ`. Experimental: no MSE theory covers it.
pub fn clse_fit_penalized(
    x: &DesignMatrix,
    y: &ResponseVector,
    spec: &ProjectionSpec,
    gamma_penalty: f64,
) -> Result<FitResult> {
    y.check_matches(x)?;
    check_projection_dims(x, spec.input_dim, spec.output_dim)?;
    let op = sample_projection(spec)?;
    clse_fit_with(x, y, &op, Some(gamma_penalty))
}

/// CLSE for a given operator, skipping the rank precondition. A singular
/// projected Gram matrix yields the minimum-norm `γ̂`.
pub fn clse_fit_with(
    x: &DesignMatrix,
    y: &ResponseVector,
    op: &ProjectionOperator,
    gamma_penalty: Option<f64>,
) -> Result<FitResult> {
    y.check_matches(x)?;
    let z = op.project_columns(x.values())?;
    let gamma = match gamma_penalty {
        None => pseudo_inverse(&z, PINV_REL_TOL)?.0 * y.values(),
        Some(lambda) => ridge_smoother(&z, lambda)? * y.values(),
    };
    let beta = op.lift(&gamma)?;
    let mut fit = FitResult::new(Method::Clse, beta, x, y);
    fit.gamma_projected = Some(gamma);
    fit.d = Some(op.output_dim());
    fit.seeds = vec![op.spec().seed];
    fit.family = Some(op.spec().family);
    fit.lambda = gamma_penalty;
    Ok(fit)
}

/// Average of `k` CLSE coefficient vectors on substreams `0..k` of
/// `spec.seed`. Sub-fits may run concurrently; the sum is always taken in
/// ascending stream order.
pub fn aclse_fit(
    x: &DesignMatrix,
    y: &ResponseVector,
    spec: &ProjectionSpec,
    k: usize,
) -> Result<FitResult> {
    if k == 0 {
        return Err(Error::invalid("ACLSE needs k >= 1"));
    }
    y.check_matches(x)?;
    check_projection_dims(x, spec.input_dim, spec.output_dim)?;
    let betas: Vec<DVector<f64>> = (0..k as u64)
        .into_par_iter()
        .map(|i| {
            let op = sample_projection(&spec.stream(i))?;
            Ok(clse_fit_with(x, y, &op, None)?.beta_original)
        })
        .collect::<Result<_>>()?;
    let beta = ordered_mean(&betas);
    let mut fit = FitResult::new(Method::Aclse, beta, x, y);
    fit.d = Some(spec.output_dim);
    fit.k = k;
    fit.seeds = (0..k as u64)
        .map(|i| substream_seed(spec.seed, i))
        .collect();
    fit.family = Some(spec.family);
    Ok(fit)
}

/// Mean of vectors, summed in slice order.
pub fn ordered_mean(vectors: &[DVector<f64>]) -> DVector<f64> {
    let mut iter = vectors.iter();
    let mut sum = iter.next().expect("at least one vector").clone();
    for v in iter {
        sum += v;
    }
    sum / vectors.len() as f64
}

/// OLS on `(ψX, ψY)` with `ψ` sampled from `spec` (`input_dim = n`).
pub fn row_compressed_ols(
    x: &DesignMatrix,
    y: &ResponseVector,
    spec: &ProjectionSpec,
    policy: RankPolicy,
) -> Result<FitResult> {
    y.check_matches(x)?;
    if spec.input_dim != x.n() {
        return Err(Error::Dim {
            expected: x.n(),
            found: spec.input_dim,
        });
    }
    if spec.output_dim < x.p() && policy == RankPolicy::Reject {
        return Err(Error::Rank {
            requested: x.p(),
            rank: spec.output_dim,
        });
    }
    let op = sample_projection(spec)?;
    row_compressed_with(x, y, &op, policy)
}

pub fn row_compressed_with(
    x: &DesignMatrix,
    y: &ResponseVector,
    op: &ProjectionOperator,
    policy: RankPolicy,
) -> Result<FitResult> {
    let (px, py) = crate::projections::apply_rows(op, x, y)?;
    let beta = ols_smoother_checked(px.values(), policy)? * py.values();
    let mut fit = FitResult::new(Method::RowCompressed, beta, x, y);
    fit.d = Some(op.output_dim());
    fit.seeds = vec![op.spec().seed];
    fit.family = Some(op.spec().family);
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub grid: Vec<usize>,
    /// Held-out mean squared error, `grid.len() × folds`.
    pub fold_errors: DMatrix<f64>,
    pub mean_errors: Vec<f64>,
    pub chosen_d: usize,
    /// Smallest `d` whose mean error is within one standard error of the
    /// winner's.
    pub one_se_d: usize,
}

/// K-fold cross-validation of the CLSE projection dimension.
///
/// Rows are shuffled with substream 0 of `template.seed` and split into
/// contiguous folds; cell `(fold f, grid index g)` projects with substream
/// `1 + f·|grid| + g`.
pub fn select_dim_cv(
    x: &DesignMatrix,
    y: &ResponseVector,
    template: &ProjectionSpec,
    grid: &[usize],
    folds: usize,
) -> Result<CvReport> {
    y.check_matches(x)?;
    if grid.is_empty() {
        return Err(Error::invalid("cross-validation grid is empty"));
    }
    if folds < 2 || folds > x.n() {
        return Err(Error::invalid(format!(
            "folds must lie in 2..={}, got {folds}",
            x.n()
        )));
    }
    if template.input_dim != x.p() {
        return Err(Error::Dim {
            expected: x.p(),
            found: template.input_dim,
        });
    }
    let n = x.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(substream_seed(template.seed, 0)));
    let bounds: Vec<(usize, usize)> = (0..folds)
        .map(|f| (f * n / folds, (f + 1) * n / folds))
        .collect();

    let splits: Vec<(DesignMatrix, ResponseVector, DesignMatrix, ResponseVector)> = bounds
        .iter()
        .map(|&(lo, hi)| {
            let test: Vec<usize> = order[lo..hi].to_vec();
            let train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
            (
                x.select_rows(&train),
                y.select_rows(&train),
                x.select_rows(&test),
                y.select_rows(&test),
            )
        })
        .collect();
    let max_d = *grid.iter().max().expect("non-empty grid");
    for (xt, ..) in &splits {
        let rank = xt.rank();
        if max_d > rank {
            return Err(Error::Rank {
                requested: max_d,
                rank,
            });
        }
    }

    let cells: Vec<(usize, usize)> = (0..folds)
        .flat_map(|f| (0..grid.len()).map(move |g| (f, g)))
        .collect();
    let errors: Vec<f64> = cells
        .par_iter()
        .map(|&(f, g)| {
            let (xt, yt, xv, yv) = &splits[f];
            let spec = ProjectionSpec {
                output_dim: grid[g],
                seed: substream_seed(template.seed, 1 + (f * grid.len() + g) as u64),
                ..*template
            };
            let op = sample_projection(&spec)?;
            let fit = clse_fit_with(xt, yt, &op, None)?;
            let resid = yv.values() - xv.values() * &fit.beta_original;
            Ok(resid.norm_squared() / yv.len() as f64)
        })
        .collect::<Result<_>>()?;

    let mut fold_errors = DMatrix::zeros(grid.len(), folds);
    for (&(f, g), e) in cells.iter().zip(&errors) {
        fold_errors[(g, f)] = *e;
    }
    let stats: Vec<Moments> = (0..grid.len())
        .map(|g| {
            let mut m = Moments::default();
            fold_errors.row(g).iter().for_each(|&e| m.push(e));
            m
        })
        .collect();
    let mean_errors: Vec<f64> = stats.iter().map(Moments::mean).collect();

    let best = (0..grid.len())
        .min_by(|&a, &b| {
            mean_errors[a]
                .total_cmp(&mean_errors[b])
                .then(grid[a].cmp(&grid[b]))
        })
        .expect("non-empty grid");
    let threshold = mean_errors[best] + stats[best].stderr();
    let one_se_d = (0..grid.len())
        .filter(|&g| mean_errors[g] <= threshold)
        .map(|g| grid[g])
        .min()
        .expect("winner satisfies its own threshold");

    Ok(CvReport {
        grid: grid.to_vec(),
        fold_errors,
        mean_errors,
        chosen_d: grid[best],
        one_se_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_design(n: usize, p: usize, seed: u64) -> DesignMatrix {
        let mut rng = rng_for(seed);
        DesignMatrix::new(DMatrix::from_fn(n, p, |_, _| {
            StandardNormal.sample(&mut rng)
        }))
        .unwrap()
    }

    fn noisy_response(x: &DesignMatrix, beta: &[f64], sigma: f64, seed: u64) -> ResponseVector {
        let mut rng = rng_for(seed);
        let clean = x.values() * DVector::from_column_slice(beta);
        ResponseVector::new(clean.map(|v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v + sigma * e
        }))
        .unwrap()
    }

    /// Normal equations by Gaussian elimination with partial pivoting.
    fn normal_equations(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        let p = x.ncols();
        let mut a: Vec<Vec<f64>> = (0..p)
            .map(|i| {
                let mut row: Vec<f64> = (0..p).map(|j| x.column(i).dot(&x.column(j))).collect();
                row.push(x.column(i).dot(y));
                row
            })
            .collect();
        for c in 0..p {
            let piv = (c..p)
                .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
                .unwrap();
            a.swap(c, piv);
            for r in 0..p {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=p {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        DVector::from_iterator(p, (0..p).map(|i| a[i][p] / a[i][i]))
    }

    #[test]
    fn ols_recovers_exact_signal_on_orthonormal_columns() {
        let s = 0.5f64.sqrt();
        let x = DesignMatrix::from_row_slice(4, 2, &[s, s, s, -s, s, s, s, -s]).unwrap();
        let y = ResponseVector::new(x.values() * DVector::from_column_slice(&[1.0, 2.0])).unwrap();
        let fit = ols_fit(&x, &y, RankPolicy::Reject).unwrap();
        assert!((fit.beta_original[0] - 1.0).abs() < 1e-12);
        assert!((fit.beta_original[1] - 2.0).abs() < 1e-12);
        assert!(fit.training_mse < 1e-24);
    }

    #[test]
    fn ols_zero_response() {
        let x = random_design(6, 2, 1);
        let y = ResponseVector::new(DVector::zeros(6)).unwrap();
        assert_eq!(
            ols_fit(&x, &y, RankPolicy::Reject).unwrap().beta_original,
            DVector::zeros(2)
        );
    }

    #[test]
    fn ols_matches_normal_equations() {
        let x = DesignMatrix::from_row_slice(
            6,
            2,
            &[
                1.0, 0.5, 2.0, -1.0, 0.3, 0.8, -1.2, 2.2, 0.7, 0.1, 1.5, -0.4,
            ],
        )
        .unwrap();
        let y = ResponseVector::from_slice(&[1.0, 2.5, -0.3, 0.8, 1.1, -2.0]).unwrap();
        let fit = ols_fit(&x, &y, RankPolicy::Reject).unwrap();
        let oracle = normal_equations(x.values(), y.values());
        assert!((fit.beta_original - oracle).amax() < 1e-12);
        // residual orthogonal to the column space
        let resid =
            y.values() - x.values() * ols_fit(&x, &y, RankPolicy::Reject).unwrap().beta_original;
        assert!(x.values().tr_mul(&resid).amax() < 1e-8 * y.values().norm());
    }

    #[test]
    fn ols_singular_requires_min_norm() {
        let x = DesignMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
        let y = ResponseVector::from_slice(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            ols_fit(&x, &y, RankPolicy::Reject),
            Err(Error::Singular { rank: 1, dim: 2 })
        ));
        let fit = ols_fit(&x, &y, RankPolicy::MinNorm).unwrap();
        // min-norm solution of b1 + 2 b2 = 1 is (0.2, 0.4)
        assert!((fit.beta_original[0] - 0.2).abs() < 1e-12);
        assert!((fit.beta_original[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn ridge_zero_penalty_is_ols() {
        let x = random_design(10, 3, 4);
        let y = noisy_response(&x, &[1.0, -1.0, 0.5], 0.3, 5);
        let r = ridge_fit(&x, &y, 0.0).unwrap();
        let o = ols_fit(&x, &y, RankPolicy::Reject).unwrap();
        assert!((r.beta_original - o.beta_original).amax() < 1e-10);
    }

    #[test]
    fn ridge_huge_penalty_shrinks_to_zero() {
        let x = random_design(10, 3, 4);
        let y = noisy_response(&x, &[1.0, -1.0, 0.5], 0.3, 5);
        assert!(ridge_fit(&x, &y, 1e12).unwrap().beta_original.norm() < 1e-6);
    }

    #[test]
    fn ridge_negative_penalty_rejected() {
        let x = random_design(5, 2, 4);
        let y = ResponseVector::new(DVector::zeros(5)).unwrap();
        assert!(matches!(
            ridge_fit(&x, &y, -1.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn ridge_shrinks_per_coordinate_on_diagonal_gram() {
        let (x, s) =
            crate::design::synthetic_design(crate::design::SyntheticKind::InverseIndex, 6, 4)
                .unwrap();
        let y = ResponseVector::from_slice(&[0.3, -1.0, 2.0, 0.5, 0.1, -0.2]).unwrap();
        let lambda = 0.4;
        let ridge = ridge_fit(&x, &y, lambda).unwrap();
        let ols = ols_fit(&x, &y, RankPolicy::Reject).unwrap();
        for (i, &l) in s.eigenvalues().iter().enumerate() {
            let expect = l / (l + lambda) * ols.beta_original[i];
            assert!((ridge.beta_original[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn clse_full_dimension_is_ols() {
        let x = random_design(12, 4, 7);
        let y = noisy_response(&x, &[1.0, 2.0, -1.0, 0.0], 0.5, 8);
        let phi = random_design(4, 4, 9).into_values();
        let op = ProjectionOperator::from_matrix(phi).unwrap();
        let clse = clse_fit_with(&x, &y, &op, None).unwrap();
        let ols = ols_fit(&x, &y, RankPolicy::Reject).unwrap();
        assert!((clse.beta_original - ols.beta_original).amax() < 1e-8);
    }

    #[test]
    fn clse_identity_embedding_is_ols() {
        let x = random_design(8, 3, 1);
        let y = noisy_response(&x, &[1.0, 2.0, -1.0], 0.5, 2);
        let op = ProjectionOperator::identity(3).unwrap();
        let clse = clse_fit_with(&x, &y, &op, None).unwrap();
        let ols = ols_fit(&x, &y, RankPolicy::Reject).unwrap();
        assert!((clse.beta_original - ols.beta_original).amax() < 1e-10);
    }

    #[test]
    fn clse_zero_response_every_family() {
        let x = random_design(10, 6, 3);
        let y = ResponseVector::new(DVector::zeros(10)).unwrap();
        for family in [
            Family::Gaussian,
            Family::Sign,
            Family::sparse_default(),
            Family::Srht,
        ] {
            for seed in 0..5 {
                let spec = ProjectionSpec::new(family, 6, 3, seed).unwrap();
                assert_eq!(
                    clse_fit(&x, &y, &spec).unwrap().beta_original,
                    DVector::zeros(6)
                );
            }
        }
    }

    #[test]
    fn clse_matches_two_variable_regression() {
        let x = random_design(15, 6, 10);
        let y = noisy_response(&x, &[1.0, 0.5, -0.5, 2.0, 0.0, 1.0], 0.2, 11);
        let spec = ProjectionSpec::new(Family::Gaussian, 6, 2, 12).unwrap();
        let fit = clse_fit(&x, &y, &spec).unwrap();
        let phi = sample_projection(&spec).unwrap().to_dense();
        let z = x.values() * &phi;
        let gamma = normal_equations(&z, y.values());
        assert!((fit.gamma_projected.clone().unwrap() - &gamma).amax() < 1e-10);
        assert!((fit.beta_original - &phi * gamma).amax() < 1e-10);
    }

    #[test]
    fn clse_rank_precondition() {
        // rank 2 design
        let x = DesignMatrix::new(random_design(2, 5, 1).into_values()).unwrap();
        let y = ResponseVector::from_slice(&[1.0, 2.0]).unwrap();
        let spec = ProjectionSpec::new(Family::Gaussian, 5, 3, 0).unwrap();
        assert!(matches!(
            clse_fit(&x, &y, &spec),
            Err(Error::Rank {
                requested: 3,
                rank: 2
            })
        ));
        let spec = ProjectionSpec::new(Family::Gaussian, 4, 3, 0).unwrap();
        assert!(matches!(clse_fit(&x, &y, &spec), Err(Error::Dim { .. })));
    }

    #[test]
    fn clse_prediction_invariance() {
        let x = random_design(20, 8, 13);
        let y = noisy_response(&x, &[1.0; 8], 0.5, 14);
        for family in [Family::Gaussian, Family::Srht] {
            let spec = ProjectionSpec::new(family, 8, 3, 15).unwrap();
            let fit = clse_fit(&x, &y, &spec).unwrap();
            let op = sample_projection(&spec).unwrap();
            let z = op.project_columns(x.values()).unwrap();
            let via_gamma = z * fit.gamma_projected.unwrap();
            assert!((via_gamma - x.values() * fit.beta_original).amax() < 1e-10);
        }
    }

    #[test]
    fn ols_training_error_below_clse() {
        let x = random_design(30, 10, 16);
        let y = noisy_response(&x, &[1.0; 10], 1.0, 17);
        let ols = ols_fit(&x, &y, RankPolicy::Reject).unwrap();
        for d in 1..=10 {
            let spec = ProjectionSpec::new(Family::Gaussian, 10, d, d as u64).unwrap();
            let clse = clse_fit(&x, &y, &spec).unwrap();
            assert!(ols.training_mse <= clse.training_mse + 1e-12);
        }
    }

    #[test]
    fn aclse_single_stream_is_clse() {
        let x = random_design(20, 8, 18);
        let y = noisy_response(&x, &[1.0; 8], 0.5, 19);
        let spec = ProjectionSpec::new(Family::Gaussian, 8, 3, 20).unwrap();
        let a = aclse_fit(&x, &y, &spec, 1).unwrap();
        let c = clse_fit(&x, &y, &spec).unwrap();
        assert_eq!(a.beta_original, c.beta_original);
        assert_eq!(a.seeds, c.seeds);
    }

    #[test]
    fn aclse_two_streams_order_insensitive() {
        let x = random_design(20, 8, 18);
        let y = noisy_response(&x, &[1.0; 8], 0.5, 19);
        let spec = ProjectionSpec::new(Family::Gaussian, 8, 3, 21).unwrap();
        let b0 = clse_fit(&x, &y, &spec.stream(0)).unwrap().beta_original;
        let b1 = clse_fit(&x, &y, &spec.stream(1)).unwrap().beta_original;
        let fwd = ordered_mean(&[b0.clone(), b1.clone()]);
        let rev = ordered_mean(&[b1, b0]);
        assert_eq!(fwd, rev);
        assert_eq!(aclse_fit(&x, &y, &spec, 2).unwrap().beta_original, fwd);
    }

    #[test]
    fn aclse_is_thread_count_independent() {
        let x = random_design(25, 10, 22);
        let y = noisy_response(&x, &[1.0; 10], 0.5, 23);
        let spec = ProjectionSpec::new(Family::Srht, 10, 4, 24).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| aclse_fit(&x, &y, &spec, 16).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn row_compression_identity_is_ols() {
        let x = random_design(10, 3, 25);
        let y = noisy_response(&x, &[1.0, 2.0, 3.0], 0.5, 26);
        let op = ProjectionOperator::identity(10).unwrap();
        let row = row_compressed_with(&x, &y, &op, RankPolicy::Reject).unwrap();
        let ols = ols_fit(&x, &y, RankPolicy::Reject).unwrap();
        assert_eq!(row.beta_original, ols.beta_original);
    }

    #[test]
    fn row_compression_smoke() {
        let x = random_design(30, 4, 27);
        let y = noisy_response(&x, &[1.0, 2.0, 3.0, 4.0], 0.5, 28);
        let spec = ProjectionSpec::new(Family::Gaussian, 30, 29, 29).unwrap();
        let fit = row_compressed_ols(&x, &y, &spec, RankPolicy::Reject).unwrap();
        assert!(fit.beta_original.iter().all(|b| b.is_finite()));
        let op = sample_projection(&spec).unwrap();
        let (px, py) = crate::projections::apply_rows(&op, &x, &y).unwrap();
        let resid = py.values() - px.values() * &fit.beta_original;
        assert!(px.values().tr_mul(&resid).amax() < 1e-8 * py.values().norm());
    }

    #[test]
    fn row_compression_below_p_is_rank_error() {
        let x = random_design(10, 4, 30);
        let y = noisy_response(&x, &[1.0; 4], 0.5, 31);
        let spec = ProjectionSpec::new(Family::Gaussian, 10, 3, 0).unwrap();
        assert!(matches!(
            row_compressed_ols(&x, &y, &spec, RankPolicy::Reject),
            Err(Error::Rank { .. })
        ));
        assert!(row_compressed_ols(&x, &y, &spec, RankPolicy::MinNorm).is_ok());
    }

    #[test]
    fn cv_singleton_grid() {
        let x = random_design(20, 6, 32);
        let y = noisy_response(&x, &[1.0; 6], 0.5, 33);
        let spec = ProjectionSpec::new(Family::Gaussian, 6, 1, 34).unwrap();
        let report = select_dim_cv(&x, &y, &spec, &[3], 4).unwrap();
        assert_eq!(report.chosen_d, 3);
        assert_eq!(report.one_se_d, 3);
        assert_eq!(report.fold_errors.shape(), (1, 4));
    }

    #[test]
    fn cv_rejects_empty_grid_and_bad_folds() {
        let x = random_design(20, 6, 32);
        let y = noisy_response(&x, &[1.0; 6], 0.5, 33);
        let spec = ProjectionSpec::new(Family::Gaussian, 6, 1, 34).unwrap();
        assert!(matches!(
            select_dim_cv(&x, &y, &spec, &[], 4),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            select_dim_cv(&x, &y, &spec, &[2], 1),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn cv_is_deterministic() {
        let x = random_design(24, 6, 35);
        let y = noisy_response(&x, &[1.0; 6], 0.5, 36);
        let spec = ProjectionSpec::new(Family::Gaussian, 6, 1, 37).unwrap();
        let a = select_dim_cv(&x, &y, &spec, &[1, 2, 3, 4], 3).unwrap();
        let b = select_dim_cv(&x, &y, &spec, &[1, 2, 3, 4], 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn provenance_lists_seeds() {
        let x = random_design(20, 8, 18);
        let y = noisy_response(&x, &[1.0; 8], 0.5, 19);
        let spec = ProjectionSpec::new(Family::Gaussian, 8, 3, 5).unwrap();
        let fit = aclse_fit(&x, &y, &spec, 3).unwrap();
        let s = fit.provenance();
        assert_eq!(s.get("method"), Some("aclse"));
        assert_eq!(s.get("k"), Some("3"));
        assert_eq!(s.get("seeds").unwrap().split(',').count(), 3);
        let mut csv = Vec::new();
        fit.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 9);
    }
}
