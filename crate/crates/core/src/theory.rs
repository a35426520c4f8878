//! Closed-form MSE expressions for compressed least squares.
//!
//! Everything here is evaluated in the principal-component basis, where the
//! Gram matrix is `diag(λ_1, …, λ_p)` and `β` is expressed in that basis.
//! Rotate with [`crate::design::pc_rotate`] first.
//!
//! The bounds are proved for Gaussian projections. When a different family
//! is used in practice they are reported unchanged and should be read as the
//! Gaussian-theory reference values.

use std::fmt;
use std::io::Write;

use crate::design::{format_f64, NoiseModel, Spectrum};
use crate::error::{Error, Result};
use crate::numeric::dd_sum;

/// Maximum disagreement tolerated between the two algebraic forms of `w_i`.
pub const SHRINKAGE_FORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MseKind {
    Thm1Bound,
    Thm2Bound,
    ExactThm3,
    RidgeExact,
    OrthonormalExact,
    Thm4Bound,
}

impl fmt::Display for MseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MseKind::Thm1Bound => "thm1_bound",
            MseKind::Thm2Bound => "thm2_bound",
            MseKind::ExactThm3 => "exact_thm3",
            MseKind::RidgeExact => "ridge_exact",
            MseKind::OrthonormalExact => "orthonormal_exact",
            MseKind::Thm4Bound => "thm4_bound",
        })
    }
}

/// Variance term plus per-direction bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MseReport {
    pub kind: MseKind,
    pub variance_term: f64,
    pub bias_per_direction: Vec<f64>,
    pub total: f64,
    /// Monte Carlo standard error of `total` when it depends on estimates.
    pub total_stderr: Option<f64>,
}

impl MseReport {
    fn new(kind: MseKind, variance_term: f64, bias_per_direction: Vec<f64>) -> Self {
        let total = variance_term + dd_sum(bias_per_direction.iter().copied());
        Self {
            kind,
            variance_term,
            bias_per_direction,
            total,
            total_stderr: None,
        }
    }

    pub fn bias(&self) -> f64 {
        dd_sum(self.bias_per_direction.iter().copied())
    }

    /// One row per direction `(i, λ_i, β_i, bias_i)` and a closing totals row.
    pub fn write_csv<W: Write>(&self, mut out: W, spectrum: &Spectrum, beta: &[f64]) -> Result<()> {
        let io = |e| Error::io("<mse report>", e);
        writeln!(out, "i,lambda,beta,bias").map_err(io)?;
        for (i, ((l, b), bias)) in spectrum
            .eigenvalues()
            .iter()
            .zip(beta)
            .zip(&self.bias_per_direction)
            .enumerate()
        {
            writeln!(
                out,
                "{},{},{},{}",
                i + 1,
                format_f64(*l),
                format_f64(*b),
                format_f64(*bias)
            )
            .map_err(io)?;
        }
        writeln!(
            out,
            "total,{},{},{}",
            format_f64(self.variance_term),
            self.kind,
            format_f64(self.total)
        )
        .map_err(io)?;
        Ok(())
    }
}

/// Per-direction shrinkage factors `w_i` of the improved CLSE bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageFactors {
    pub w: Vec<f64>,
    pub d: usize,
}

/// Monte Carlo estimates of the implicit diagonal `T = diag(1/η_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaEstimates {
    pub d: usize,
    pub num_samples: usize,
    pub eta: Vec<f64>,
    /// Standard error of each `η_i` (delta method).
    pub stderr: Vec<f64>,
    /// `λ_i / η_i`.
    pub ratio: Vec<f64>,
    pub ratio_stderr: Vec<f64>,
    /// Draws discarded because `φᵀΣφ` was numerically singular.
    pub resampled: usize,
}

impl EtaEstimates {
    /// Build from `η` values and their standard errors.
    pub fn from_eta(
        spectrum: &Spectrum,
        d: usize,
        eta: Vec<f64>,
        stderr: Vec<f64>,
        num_samples: usize,
    ) -> Result<Self> {
        let p = spectrum.p();
        if eta.len() != p || stderr.len() != p {
            return Err(Error::Dim {
                expected: p,
                found: eta.len().min(stderr.len()),
            });
        }
        if eta.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::invalid("eta values must be positive"));
        }
        let ratio = spectrum
            .eigenvalues()
            .iter()
            .zip(&eta)
            .map(|(l, e)| l / e)
            .collect();
        let ratio_stderr = spectrum
            .eigenvalues()
            .iter()
            .zip(eta.iter().zip(&stderr))
            .map(|(l, (e, s))| l * s / (e * e))
            .collect();
        Ok(Self {
            d,
            num_samples,
            eta,
            stderr,
            ratio,
            ratio_stderr,
            resampled: 0,
        })
    }

    pub fn p(&self) -> usize {
        self.eta.len()
    }

    /// `Σλ_i/η_i` with its combined standard error (independent terms).
    pub fn trace_identity(&self) -> (f64, f64) {
        let value = dd_sum(self.ratio.iter().copied());
        let se = self.ratio_stderr.iter().map(|s| s * s).sum::<f64>().sqrt();
        (value, se)
    }
}

/// Variance factor `τ = Σ(λ_i/η_i)²` of the infinitely averaged estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauEstimate {
    pub d: usize,
    pub p: usize,
    pub tau: f64,
    pub stderr: f64,
}

impl TauEstimate {
    /// `d²/p`.
    pub fn lower(&self) -> f64 {
        (self.d * self.d) as f64 / self.p as f64
    }

    /// `d`.
    pub fn upper(&self) -> f64 {
        self.d as f64
    }

    pub fn within_bounds(&self, sigmas: f64) -> bool {
        let slack = sigmas * self.stderr;
        self.tau >= self.lower() - slack && self.tau <= self.upper() + slack
    }
}

fn check_d(spectrum: &Spectrum, d: usize) -> Result<()> {
    if d == 0 || d > spectrum.p() {
        return Err(Error::invalid(format!(
            "d={d} must lie in 1..={}",
            spectrum.p()
        )));
    }
    let rank = spectrum.rank();
    if d > rank {
        return Err(Error::Rank { requested: d, rank });
    }
    Ok(())
}

fn check_beta(spectrum: &Spectrum, beta: &[f64]) -> Result<()> {
    if beta.len() != spectrum.p() {
        return Err(Error::Dim {
            expected: spectrum.p(),
            found: beta.len(),
        });
    }
    crate::numeric::check_finite(beta, "beta")
}

/// `w` from the eigenvalue form.
pub fn shrinkage_lambda_form(lambda: f64, trace: f64, d: usize) -> f64 {
    let d = d as f64;
    let (l, s) = (lambda, trace);
    let num = (1.0 + 1.0 / d) * l * l + (1.0 + 2.0 / d) * l * s + s * s / d;
    let den = (d + 2.0 + 1.0 / d) * l * l + 2.0 * (1.0 + 1.0 / d) * l * s + s * s / d;
    num / den
}

/// `w` from the variance-proportion form, `α = λ / s`.
pub fn shrinkage_alpha_form(alpha: f64, d: usize) -> f64 {
    let d = d as f64;
    let a = alpha;
    let num = (1.0 + 1.0 / d) * a * a + (1.0 + 2.0 / d) * a + 1.0 / d;
    let den = (d + 2.0 + 1.0 / d) * a * a + 2.0 * (1.0 + 1.0 / d) * a + 1.0 / d;
    num / den
}

/// Shrinkage factors, evaluated in both algebraic forms and cross-checked.
pub fn shrinkage_factors(spectrum: &Spectrum, d: usize) -> Result<ShrinkageFactors> {
    if d == 0 {
        return Err(Error::invalid("d must be >= 1"));
    }
    let s = spectrum.trace();
    let w: Vec<f64> = spectrum
        .eigenvalues()
        .iter()
        .zip(spectrum.alphas())
        .map(|(&l, &a)| {
            let by_lambda = shrinkage_lambda_form(l, s, d);
            let by_alpha = shrinkage_alpha_form(a, d);
            if (by_lambda - by_alpha).abs() > SHRINKAGE_FORM_TOL {
                return Err(Error::Numerical(format!(
                    "shrinkage forms disagree: {by_lambda} vs {by_alpha}"
                )));
            }
            Ok(by_lambda)
        })
        .collect::<Result<_>>()?;
    Ok(ShrinkageFactors { w, d })
}

/// `σ²d + ‖Xβ‖²/d + trace(XᵀX)‖β‖²/d`.
pub fn theorem1_bound(
    spectrum: &Spectrum,
    beta: &[f64],
    noise: NoiseModel,
    d: usize,
) -> Result<MseReport> {
    check_d(spectrum, d)?;
    check_beta(spectrum, beta)?;
    let s = spectrum.trace();
    let df = d as f64;
    let bias = spectrum
        .eigenvalues()
        .iter()
        .zip(beta)
        .map(|(l, b)| b * b * l / df + s * b * b / df)
        .collect();
    Ok(MseReport::new(
        MseKind::Thm1Bound,
        noise.sigma2() * df,
        bias,
    ))
}

/// `σ²d + Σβ_i²λ_i w_i`.
pub fn theorem2_bound(
    spectrum: &Spectrum,
    beta: &[f64],
    noise: NoiseModel,
    d: usize,
) -> Result<MseReport> {
    check_d(spectrum, d)?;
    check_beta(spectrum, beta)?;
    let w = shrinkage_factors(spectrum, d)?.w;
    let bias = spectrum
        .eigenvalues()
        .iter()
        .zip(beta)
        .zip(&w)
        .map(|((l, b), w)| b * b * l * w)
        .collect();
    Ok(MseReport::new(
        MseKind::Thm2Bound,
        noise.sigma2() * d as f64,
        bias,
    ))
}

/// Exact ridge MSE `σ²Σ(λ_i/(λ_i+λ))² + Σβ_i²λ_i(λ/(λ+λ_i))²`.
pub fn ridge_mse(
    spectrum: &Spectrum,
    beta: &[f64],
    noise: NoiseModel,
    lambda: f64,
) -> Result<MseReport> {
    check_beta(spectrum, beta)?;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::invalid(format!(
            "ridge penalty must be finite and >= 0, got {lambda}"
        )));
    }
    let eig = spectrum.eigenvalues();
    let variance = noise.sigma2()
        * dd_sum(eig.iter().map(|&l| {
            if l + lambda == 0.0 {
                0.0
            } else {
                (l / (l + lambda)).powi(2)
            }
        }));
    let bias = eig
        .iter()
        .zip(beta)
        .map(|(&l, b)| {
            if l == 0.0 {
                0.0
            } else {
                b * b * l * (lambda / (lambda + l)).powi(2)
            }
        })
        .collect();
    Ok(MseReport::new(MseKind::RidgeExact, variance, bias))
}

/// Penalty whose effective dimension `Σλ_i/(λ_i+λ)` equals `d`; zero when
/// `d` reaches the rank.
pub fn matched_ridge_lambda(spectrum: &Spectrum, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::invalid("d must be >= 1"));
    }
    let target = d as f64;
    if d >= spectrum.rank() {
        return Ok(0.0);
    }
    let dof = |lambda: f64| {
        spectrum
            .eigenvalues()
            .iter()
            .map(|l| l / (l + lambda))
            .sum::<f64>()
    };
    let (mut lo, mut hi) = (0.0f64, spectrum.eigenvalues()[0].max(f64::MIN_POSITIVE));
    while dof(hi) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dof(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `σ²d + Σβ_i²λ_i(1 − λ_i/η_i)` with plug-in `η` estimates.
pub fn exact_mse_from_eta(
    spectrum: &Spectrum,
    beta: &[f64],
    noise: NoiseModel,
    eta: &EtaEstimates,
) -> Result<MseReport> {
    check_beta(spectrum, beta)?;
    if eta.p() != spectrum.p() {
        return Err(Error::Dim {
            expected: spectrum.p(),
            found: eta.p(),
        });
    }
    check_d(spectrum, eta.d)?;
    let bias = spectrum
        .eigenvalues()
        .iter()
        .zip(beta)
        .zip(&eta.ratio)
        .map(|((l, b), r)| b * b * l * (1.0 - r))
        .collect();
    let se = spectrum
        .eigenvalues()
        .iter()
        .zip(beta)
        .zip(&eta.ratio_stderr)
        .map(|((l, b), s)| (b * b * l * s).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut report = MseReport::new(MseKind::ExactThm3, noise.sigma2() * eta.d as f64, bias);
    report.total_stderr = Some(se);
    Ok(report)
}

/// Closed form for `Σ = C·I`: `σ²d + C·Σβ_i²(1 − d/p)`.
pub fn orthonormal_mse(
    scale: f64,
    beta: &[f64],
    noise: NoiseModel,
    d: usize,
    p: usize,
) -> Result<MseReport> {
    if !(scale > 0.0) {
        return Err(Error::invalid("orthonormal scale C must be positive"));
    }
    if d == 0 || d > p {
        return Err(Error::invalid(format!("d={d} must lie in 1..={p}")));
    }
    if beta.len() != p {
        return Err(Error::Dim {
            expected: p,
            found: beta.len(),
        });
    }
    let shrink = 1.0 - d as f64 / p as f64;
    let bias = beta.iter().map(|b| scale * b * b * shrink).collect();
    Ok(MseReport::new(
        MseKind::OrthonormalExact,
        noise.sigma2() * d as f64,
        bias,
    ))
}

/// `σ²τ + Σβ_i²λ_i w_i²` for the infinitely averaged estimator.
pub fn theorem4_bound(
    spectrum: &Spectrum,
    beta: &[f64],
    noise: NoiseModel,
    d: usize,
    tau: &TauEstimate,
) -> Result<MseReport> {
    check_d(spectrum, d)?;
    check_beta(spectrum, beta)?;
    if tau.d != d || tau.p != spectrum.p() {
        return Err(Error::invalid(format!(
            "tau was estimated for (d={}, p={}), not (d={d}, p={})",
            tau.d,
            tau.p,
            spectrum.p()
        )));
    }
    if !tau.within_bounds(3.0) {
        return Err(Error::invalid(format!(
            "tau={} outside [{}, {}] beyond 3 standard errors",
            tau.tau,
            tau.lower(),
            tau.upper()
        )));
    }
    let w = shrinkage_factors(spectrum, d)?.w;
    let bias = spectrum
        .eigenvalues()
        .iter()
        .zip(beta)
        .zip(&w)
        .map(|((l, b), w)| b * b * l * w * w)
        .collect();
    let mut report = MseReport::new(MseKind::Thm4Bound, noise.sigma2() * tau.tau, bias);
    report.total_stderr = Some(noise.sigma2() * tau.stderr);
    Ok(report)
}

/// Minimizer of `E_φ‖Xβ − Xφφᵀv‖²`:
/// `v_i = β_iλ_i / ((1 + 1/d)λ_i + s/d)`.
pub fn optimal_dense_vector(spectrum: &Spectrum, beta: &[f64], d: usize) -> Result<Vec<f64>> {
    check_beta(spectrum, beta)?;
    if d == 0 {
        return Err(Error::invalid("d must be >= 1"));
    }
    let df = d as f64;
    let s = spectrum.trace();
    Ok(spectrum
        .eigenvalues()
        .iter()
        .zip(beta)
        .map(|(l, b)| b * l / ((1.0 + 1.0 / df) * l + s / df))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(p: usize) -> Vec<f64> {
        vec![1.0; p]
    }

    #[test]
    fn theorem1_zero_signal_is_pure_variance() {
        let s = Spectrum::inverse_index(6).unwrap();
        let noise = NoiseModel::new(0.3).unwrap();
        let r = theorem1_bound(&s, &[0.0; 6], noise, 4).unwrap();
        assert!((r.total - 1.2).abs() < 1e-15);
        let r2 = theorem1_bound(&s, &[0.0; 6], noise, 2).unwrap();
        assert!((r.total - 2.0 * r2.total).abs() < 1e-15);
    }

    #[test]
    fn theorem1_hand_value() {
        let s = Spectrum::isotropic(1.0, 4).unwrap();
        let r = theorem1_bound(&s, &ones(4), NoiseModel::noiseless(), 2).unwrap();
        assert!((r.total - 10.0).abs() < 1e-14);
    }

    #[test]
    fn shrinkage_single_direction() {
        let s = Spectrum::new(vec![3.7]).unwrap();
        let w = shrinkage_factors(&s, 1).unwrap();
        assert!((w.w[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shrinkage_isotropic_hand_value() {
        let s = Spectrum::isotropic(1.0, 4).unwrap();
        let w = shrinkage_factors(&s, 2).unwrap();
        for wi in w.w {
            assert!((wi - 1.09375 / 1.53125).abs() < 1e-15);
            assert!((wi - 0.714_285_714_285_714_3).abs() < 1e-15);
        }
    }

    #[test]
    fn shrinkage_decays_with_d() {
        let s = Spectrum::inverse_index(20).unwrap();
        let maxes: Vec<f64> = [10, 100, 1000]
            .iter()
            .map(|&d| {
                shrinkage_factors(&s, d)
                    .unwrap()
                    .w
                    .into_iter()
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(maxes[0] > maxes[1] && maxes[1] > maxes[2]);
        assert!(maxes[2] < 0.1);
    }

    #[test]
    fn theorem2_never_exceeds_trivial_bound() {
        let s = Spectrum::inverse_index(12).unwrap();
        let beta: Vec<f64> = (0..12).map(|i| (i as f64 - 5.0) * 0.3).collect();
        let trivial: f64 = s
            .eigenvalues()
            .iter()
            .zip(&beta)
            .map(|(l, b)| b * b * l)
            .sum();
        for d in 1..=12 {
            let r = theorem2_bound(&s, &beta, NoiseModel::noiseless(), d).unwrap();
            assert!(r.total <= trivial);
        }
        let r = theorem2_bound(&s, &[0.0; 12], NoiseModel::new(0.5).unwrap(), 3).unwrap();
        assert_eq!(r.total, 1.5);
    }

    #[test]
    fn ridge_limits() {
        let s = Spectrum::inverse_index(5).unwrap();
        let noise = NoiseModel::new(0.2).unwrap();
        let beta = [1.0, -1.0, 2.0, 0.5, 0.0];
        let r = ridge_mse(&s, &beta, noise, 0.0).unwrap();
        assert!((r.total - 0.2 * 5.0).abs() < 1e-14);
        let r = ridge_mse(&s, &beta, noise, 1e15).unwrap();
        let signal: f64 = s
            .eigenvalues()
            .iter()
            .zip(&beta)
            .map(|(l, b)| b * b * l)
            .sum();
        assert!((r.total - signal).abs() < 1e-6 * signal);
    }

    #[test]
    fn orthonormal_closed_form() {
        let r = orthonormal_mse(1.0, &ones(4), NoiseModel::noiseless(), 2, 4).unwrap();
        assert!((r.total - 2.0).abs() < 1e-15);
        let r = orthonormal_mse(1.0, &ones(4), NoiseModel::new(0.7).unwrap(), 4, 4).unwrap();
        assert!((r.total - 0.7 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn orthonormal_agrees_with_eta_substitution() {
        let (c, p, d) = (2.5, 10, 4);
        let s = Spectrum::isotropic(c, p).unwrap();
        let beta: Vec<f64> = (0..p).map(|i| 1.0 + i as f64 / 3.0).collect();
        let noise = NoiseModel::new(0.1).unwrap();
        let eta = EtaEstimates::from_eta(&s, d, vec![c * p as f64 / d as f64; p], vec![0.0; p], 0)
            .unwrap();
        let a = exact_mse_from_eta(&s, &beta, noise, &eta).unwrap();
        let b = orthonormal_mse(c, &beta, noise, d, p).unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
    }

    #[test]
    fn full_dimension_has_no_bias() {
        let p = 6;
        let s = Spectrum::isotropic(1.0, p).unwrap();
        let eta = EtaEstimates::from_eta(&s, p, vec![1.0; p], vec![0.0; p], 0).unwrap();
        let r = exact_mse_from_eta(&s, &ones(p), NoiseModel::new(0.5).unwrap(), &eta).unwrap();
        assert_eq!(r.bias(), 0.0);
        assert_eq!(r.total, 3.0);
    }

    #[test]
    fn theorem4_lower_tau() {
        let s = Spectrum::inverse_index(20).unwrap();
        let tau = TauEstimate {
            d: 5,
            p: 20,
            tau: 25.0 / 20.0,
            stderr: 0.0,
        };
        let noise = NoiseModel::new(0.4).unwrap();
        let r = theorem4_bound(&s, &[0.0; 20], noise, 5, &tau).unwrap();
        assert!((r.total - 0.4 * 25.0 / 20.0).abs() < 1e-15);
        let beta = ones(20);
        let t4 = theorem4_bound(&s, &beta, noise, 5, &tau).unwrap();
        let t2 = theorem2_bound(&s, &beta, noise, 5).unwrap();
        assert!(t4.total <= t2.total);
    }

    #[test]
    fn theorem4_rejects_out_of_range_tau() {
        let s = Spectrum::inverse_index(20).unwrap();
        let tau = TauEstimate {
            d: 5,
            p: 20,
            tau: 6.0,
            stderr: 0.01,
        };
        assert!(theorem4_bound(&s, &ones(20), NoiseModel::noiseless(), 5, &tau).is_err());
    }

    #[test]
    fn optimal_vector_limits() {
        let s = Spectrum::new(vec![3.0, 2.0, 1.0]).unwrap();
        let v = optimal_dense_vector(&s, &[1.0, -2.0, 0.5], 1_000_000_000).unwrap();
        for (vi, bi) in v.iter().zip([1.0, -2.0, 0.5]) {
            assert!((vi - bi).abs() < 1e-6 * bi.abs());
        }
        assert_eq!(
            optimal_dense_vector(&s, &[0.0; 3], 2).unwrap(),
            vec![0.0; 3]
        );
    }

    #[test]
    fn matched_lambda_hits_effective_dimension() {
        let s = Spectrum::inverse_index(20).unwrap();
        for d in [1, 5, 12] {
            let lambda = matched_ridge_lambda(&s, d).unwrap();
            let dof: f64 = s.eigenvalues().iter().map(|l| l / (l + lambda)).sum();
            assert!((dof - d as f64).abs() < 1e-9);
        }
        assert_eq!(matched_ridge_lambda(&s, 20).unwrap(), 0.0);
    }

    #[test]
    fn domain_checks() {
        let s = Spectrum::inverse_index(4).unwrap();
        assert!(theorem1_bound(&s, &ones(4), NoiseModel::noiseless(), 0).is_err());
        assert!(theorem1_bound(&s, &ones(4), NoiseModel::noiseless(), 5).is_err());
        assert!(theorem2_bound(&s, &ones(3), NoiseModel::noiseless(), 2).is_err());
        let deficient = Spectrum::new(vec![1.0, 1.0, 0.0]).unwrap();
        assert!(matches!(
            theorem2_bound(&deficient, &ones(3), NoiseModel::noiseless(), 3),
            Err(Error::Rank {
                requested: 3,
                rank: 2
            })
        ));
    }

    #[test]
    fn report_csv_has_totals_row() {
        let s = Spectrum::inverse_index(3).unwrap();
        let r = theorem2_bound(&s, &ones(3), NoiseModel::new(0.1).unwrap(), 2).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf, &s, &ones(3)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().last().unwrap().starts_with("total,"));
    }
}
