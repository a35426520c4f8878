//! Monte Carlo estimation of the implicit quantities `η_i` and `τ`,
//! empirical MSE of the estimators, and the figure reproductions.
//!
//! Work is split into cells whose seeds derive from `(base_seed, cell
//! index)`. Cells may run on any number of threads; their results are always
//! reduced serially in cell-index order, so outputs do not depend on the
//! thread count.
//!
//! Every estimator here is linear in `Y`: `Xβ̂ = A·Y` for an `n × n` hat
//! matrix `A`. Empirical MSE is measured as `‖(A − I)Xβ + A·ε‖²` with
//! Gaussian noise `ε`, which is the same quantity a fit-then-measure loop
//! produces but without refitting for every noise draw.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::design::{
    design_from_spectrum, format_f64, DesignMatrix, NoiseModel, Spectrum, SyntheticKind,
};
use crate::error::{Error, Result};
use crate::estimators::{ols_smoother_checked, ridge_smoother, RankPolicy};
use crate::numeric::{dd_sum, pseudo_inverse, Moments, PINV_REL_TOL, RANK_REL_TOL};
use crate::projections::{
    rng_for, sample_projection, substream_seed, Family, ProjectionOperator, ProjectionSpec,
};
use crate::provenance::{content_hash, Sidecar};
use crate::theory::{
    exact_mse_from_eta, shrinkage_factors, theorem2_bound, theorem4_bound, EtaEstimates,
    TauEstimate,
};

/// Re-sample rate above which `estimate_eta` logs a warning.
pub const RESAMPLE_WARN_RATE: f64 = 0.01;

/// Consecutive singular draws after which a single `η` sample gives up.
const MAX_RESAMPLES_PER_DRAW: usize = 1000;

/// Samples per `η` work unit; fixed so that the reduction tree does not
/// depend on scheduling.
const ETA_CHUNK: usize = 250;

/// Mix a label into a seed (SplitMix64 finalizer). Used to derive
/// independent seeds for nested cells without additive collisions.
pub fn derive_seed(base: u64, label: u64) -> u64 {
    let mut z = substream_seed(base, label.wrapping_add(1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    /// Projection draws `M` (for ACLSE, `M/K` independent averages).
    pub num_projection_samples: usize,
    /// Noise draws `R` per projection cell.
    pub num_noise_reps: usize,
    pub base_seed: u64,
    pub d_grid: Vec<usize>,
    pub k_grid: Vec<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            num_projection_samples: 20_000,
            num_noise_reps: 500,
            base_seed: 0,
            d_grid: (1..=15).collect(),
            k_grid: vec![100],
        }
    }
}

impl McConfig {
    /// `max_d` is the largest admissible `d` (the rank of the design).
    pub fn validate(&self, max_d: usize, noisy: bool) -> Result<()> {
        if self.num_projection_samples < 100 {
            return Err(Error::invalid(format!(
                "need at least 100 projection samples, got {}",
                self.num_projection_samples
            )));
        }
        if noisy && self.num_noise_reps < 100 {
            return Err(Error::invalid(format!(
                "need at least 100 noise repetitions, got {}",
                self.num_noise_reps
            )));
        }
        if self.d_grid.is_empty() || self.k_grid.is_empty() {
            return Err(Error::invalid("d and K grids must be non-empty"));
        }
        if let Some(&d) = self.d_grid.iter().find(|&&d| d == 0 || d > max_d) {
            return Err(Error::Rank {
                requested: d,
                rank: max_d,
            });
        }
        if self.k_grid.contains(&0) {
            return Err(Error::invalid("K must be >= 1"));
        }
        Ok(())
    }

    pub fn to_sidecar(&self) -> Sidecar {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = Sidecar::new();
        s.set("num_projection_samples", self.num_projection_samples)
            .set("num_noise_reps", self.num_noise_reps)
            .set("base_seed", self.base_seed)
            .set("d_grid", join(&self.d_grid))
            .set("k_grid", join(&self.k_grid));
        s
    }
}

/// Monte Carlo estimate of `η_i`: the diagonal of `φ(φᵀΣφ)⁻¹φᵀ` is averaged
/// over `m` Gaussian draws and then inverted.
///
/// Draw `j` uses substream `j` of `seed`; a numerically singular `φᵀΣφ` is
/// replaced by the next draw from the same stream and counted.
pub fn estimate_eta(spectrum: &Spectrum, d: usize, m: usize, seed: u64) -> Result<EtaEstimates> {
    let p = spectrum.p();
    if d == 0 || d > p {
        return Err(Error::invalid(format!("d={d} must lie in 1..={p}")));
    }
    let rank = spectrum.rank();
    if d > rank {
        return Err(Error::Rank { requested: d, rank });
    }
    if m < 2 {
        return Err(Error::invalid("need at least two samples to estimate eta"));
    }
    let lambda = spectrum.eigenvalues();
    let chunks: Vec<(usize, usize)> = (0..m)
        .step_by(ETA_CHUNK)
        .map(|lo| (lo, (lo + ETA_CHUNK).min(m)))
        .collect();
    let partials: Vec<(Vec<Moments>, usize)> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut moments = vec![Moments::default(); p];
            let mut resampled = 0;
            let mut diag = vec![0.0; p];
            for j in lo..hi {
                resampled += draw_diagonal(lambda, d, substream_seed(seed, j as u64), &mut diag)?;
                for (mo, &v) in moments.iter_mut().zip(&diag) {
                    mo.push(v);
                }
            }
            Ok((moments, resampled))
        })
        .collect::<Result<_>>()?;

    let mut moments = vec![Moments::default(); p];
    let mut resampled = 0;
    for (part, r) in &partials {
        for (acc, m) in moments.iter_mut().zip(part) {
            acc.merge(m);
        }
        resampled += r;
    }
    if resampled as f64 > RESAMPLE_WARN_RATE * m as f64 {
        warn!("eta estimation (d={d}): {resampled} of {m} projection draws were singular and re-sampled");
    }

    let mut eta = Vec::with_capacity(p);
    let mut stderr = Vec::with_capacity(p);
    let mut ratio = Vec::with_capacity(p);
    let mut ratio_stderr = Vec::with_capacity(p);
    for (mo, &l) in moments.iter().zip(lambda) {
        let mean = mo.mean();
        let se = mo.stderr();
        if !(mean > 0.0) {
            return Err(Error::Numerical(format!(
                "non-positive mean projection diagonal {mean}"
            )));
        }
        eta.push(1.0 / mean);
        stderr.push(se / (mean * mean));
        ratio.push(l * mean);
        ratio_stderr.push(l * se);
    }
    Ok(EtaEstimates {
        d,
        num_samples: m,
        eta,
        stderr,
        ratio,
        ratio_stderr,
        resampled,
    })
}

/// One non-singular draw of `diag(φ(φᵀΣφ)⁻¹φᵀ)` into `out`; returns the
/// number of singular draws discarded first.
fn draw_diagonal(lambda: &[f64], d: usize, seed: u64, out: &mut [f64]) -> Result<usize> {
    let p = lambda.len();
    let mut rng = rng_for(seed);
    for attempt in 0..MAX_RESAMPLES_PER_DRAW {
        // The diagonal is invariant to the scale of φ, so unit variance is used.
        let phi = DMatrix::<f64>::from_fn(p, d, |_, _| rng.sample(StandardNormal));
        let mut gram = DMatrix::<f64>::zeros(d, d);
        for (k, &l) in lambda.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            let row = phi.row(k);
            gram.ger(l, &row.transpose(), &row.transpose(), 1.0);
        }
        let Some(chol) = well_conditioned_cholesky(gram) else {
            continue;
        };
        let w = chol
            .l()
            .solve_lower_triangular(&phi.transpose())
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        for (slot, col) in out.iter_mut().zip(w.column_iter()) {
            *slot = col.norm_squared();
        }
        return Ok(attempt);
    }
    Err(Error::Numerical(format!(
        "{MAX_RESAMPLES_PER_DRAW} consecutive singular projected Gram matrices"
    )))
}

/// Cholesky factor, or `None` when the matrix is numerically singular
/// (squared pivot ratio at or below the rank tolerance).
fn well_conditioned_cholesky(gram: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let chol = Cholesky::new(gram)?;
    let diag = chol.l_dirty().diagonal();
    let max = diag.iter().map(|v| v * v).fold(0.0, f64::max);
    let min = diag.iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
    (max > 0.0 && min > RANK_REL_TOL * max).then_some(chol)
}

/// `τ = Σ(λ_i/η_i)²` with a delta-method standard error that treats the
/// per-direction errors as independent.
pub fn estimate_tau(eta: &EtaEstimates) -> TauEstimate {
    let tau = dd_sum(eta.ratio.iter().map(|r| r * r));
    let stderr = eta
        .ratio
        .iter()
        .zip(&eta.ratio_stderr)
        .map(|(r, s)| (2.0 * r * s).powi(2))
        .sum::<f64>()
        .sqrt();
    TauEstimate {
        d: eta.d,
        p: eta.p(),
        tau,
        stderr,
    }
}

/// Estimator whose risk is simulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum McMethod {
    Ols,
    Ridge { lambda: f64 },
    Clse { family: Family, d: usize },
    Aclse { family: Family, d: usize, k: usize },
    RowCompressed { family: Family, m: usize },
}

impl McMethod {
    pub fn name(&self) -> &'static str {
        match self {
            McMethod::Ols => "ols",
            McMethod::Ridge { .. } => "ridge",
            McMethod::Clse { .. } => "clse",
            McMethod::Aclse { .. } => "aclse",
            McMethod::RowCompressed { .. } => "row",
        }
    }

    /// Projections averaged per outer cell (0 for deterministic methods).
    fn projections_per_cell(&self) -> usize {
        match self {
            McMethod::Ols | McMethod::Ridge { .. } => 0,
            McMethod::Clse { .. } | McMethod::RowCompressed { .. } => 1,
            McMethod::Aclse { k, .. } => *k,
        }
    }
}

/// Mean loss with the standard error across outer cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub outer_cells: usize,
    pub inner_reps: usize,
    /// Cells dropped because their fit failed.
    pub failed_cells: usize,
}

impl MseEstimate {
    fn from_cells(cells: &[Option<f64>], inner_reps: usize) -> Result<Self> {
        let mut moments = Moments::default();
        let mut failed = 0;
        for c in cells {
            match c {
                Some(v) => moments.push(*v),
                None => failed += 1,
            }
        }
        if moments.count() == 0 {
            return Err(Error::Numerical("every Monte Carlo cell failed".into()));
        }
        Ok(Self {
            mean: moments.mean(),
            stderr: moments.stderr(),
            outer_cells: moments.count() as usize,
            inner_reps,
            failed_cells: failed,
        })
    }
}

/// `A = Z(ZᵀZ)⁻¹Zᵀ` with `Z = Xφ`, so that `Xβ̂_CLSE = A·Y`.
///
/// Uses a Cholesky factor of the projected Gram matrix and falls back to the
/// pseudo-inverse when it is numerically singular.
pub fn clse_hat(x: &DMatrix<f64>, op: &ProjectionOperator) -> Result<DMatrix<f64>> {
    let z = op.project_columns(x)?;
    let gram = z.tr_mul(&z);
    if let Some(chol) = well_conditioned_cholesky(gram) {
        if let Some(w) = chol.l().solve_lower_triangular(&z.transpose()) {
            return Ok(w.tr_mul(&w));
        }
    }
    let (zp, _) = pseudo_inverse(&z, PINV_REL_TOL)?;
    Ok(&z * zp)
}

/// Hat matrix of row-compressed OLS: `X(ψX)⁺ψ`.
pub fn row_compressed_hat(x: &DMatrix<f64>, op: &ProjectionOperator) -> Result<DMatrix<f64>> {
    let psi = op.to_dense().transpose();
    let px = &psi * x;
    let h = ols_smoother_checked(&px, RankPolicy::Reject)?;
    Ok(x * h * psi)
}

/// Noise-free residual `(A − I)Xβ` and the noise map `A` of each smoother;
/// returns the mean loss `‖(A − I)Xβ + σA·ε‖²` over `reps` draws for every
/// (smoother, σ) pair, indexed `[smoother][sigma]`.
fn noise_losses(
    hats: &[DMatrix<f64>],
    signal: &DVector<f64>,
    sigmas: &[f64],
    reps: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let n = signal.len();
    let biases: Vec<DVector<f64>> = hats.iter().map(|a| a * signal - signal).collect();
    let noisy = sigmas.iter().any(|&s| s > 0.0);
    if !noisy || reps == 0 {
        return biases
            .iter()
            .map(|b| vec![b.norm_squared(); sigmas.len()])
            .collect();
    }
    let mut rng = rng_for(seed);
    let mut eps = DVector::<f64>::zeros(n);
    let mut mapped = DVector::<f64>::zeros(n);
    let mut sums = vec![vec![0.0; sigmas.len()]; hats.len()];
    for _ in 0..reps {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        for ((a, b), row) in hats.iter().zip(&biases).zip(sums.iter_mut()) {
            mapped.gemv(1.0, a, &eps, 0.0);
            for (slot, &s) in row.iter_mut().zip(sigmas) {
                *slot += b
                    .iter()
                    .zip(mapped.iter())
                    .map(|(bj, aj)| (bj + s * aj).powi(2))
                    .sum::<f64>();
            }
        }
    }
    for row in &mut sums {
        for v in row.iter_mut() {
            *v /= reps as f64;
        }
    }
    sums
}

/// Empirical `E_φ E_ε ‖Xβ − Xβ̂‖²` under `Y = Xβ + ε`, `ε ~ N(0, σ²I)`.
///
/// Projection-based methods use `M/K` outer cells (`K = 1` except for
/// ACLSE), each with its own projections and `R` noise draws. Deterministic
/// methods use `M` outer cells of `R` noise draws around one hat matrix.
pub fn empirical_mse(
    x: &DesignMatrix,
    beta: &[f64],
    noise: NoiseModel,
    method: McMethod,
    config: &McConfig,
) -> Result<MseEstimate> {
    let xv = x.values();
    if beta.len() != x.p() {
        return Err(Error::Dim {
            expected: x.p(),
            found: beta.len(),
        });
    }
    let noisy = noise.sigma2() > 0.0;
    if config.num_projection_samples == 0 || (noisy && config.num_noise_reps == 0) {
        return Err(Error::invalid("Monte Carlo sample sizes must be positive"));
    }
    let signal = xv * DVector::from_column_slice(beta);
    let sigma = noise.sigma2().sqrt();
    let reps = config.num_noise_reps;
    let per_cell = method.projections_per_cell();
    let cells = (config.num_projection_samples / per_cell.max(1)).max(1);

    let fixed_hat = match method {
        McMethod::Ols => Some(xv * ols_smoother_checked(xv, RankPolicy::Reject)?),
        McMethod::Ridge { lambda } => Some(xv * ridge_smoother(xv, lambda)?),
        _ => None,
    };
    match method {
        McMethod::Clse { family, d } | McMethod::Aclse { family, d, .. } => {
            ProjectionSpec::new(family, x.p(), d, 0)?;
            let rank = x.rank();
            if d > rank {
                return Err(Error::Rank { requested: d, rank });
            }
        }
        McMethod::RowCompressed { family, m } => {
            ProjectionSpec::new(family, x.n(), m, 0)?;
            if m < x.p() {
                return Err(Error::Rank {
                    requested: x.p(),
                    rank: m,
                });
            }
        }
        _ => {}
    }

    let results: Vec<Option<f64>> = (0..cells)
        .into_par_iter()
        .map(|c| {
            let cell_seed = derive_seed(config.base_seed, c as u64);
            let hat = match (&fixed_hat, method) {
                (Some(h), _) => Ok(h.clone()),
                (None, McMethod::Clse { family, d }) => {
                    let spec = ProjectionSpec::new(family, x.p(), d, derive_seed(cell_seed, 0))?;
                    clse_hat(xv, &sample_projection(&spec)?)
                }
                (None, McMethod::Aclse { family, d, k }) => {
                    let spec = ProjectionSpec::new(family, x.p(), d, derive_seed(cell_seed, 0))?;
                    averaged_hat(xv, &spec, k).map(|(avg, _)| avg)
                }
                (None, McMethod::RowCompressed { family, m }) => {
                    let spec = ProjectionSpec::new(family, x.n(), m, derive_seed(cell_seed, 0))?;
                    row_compressed_hat(xv, &sample_projection(&spec)?)
                }
                (None, _) => unreachable!("deterministic methods carry a fixed hat matrix"),
            };
            Ok(hat.ok().map(|a| {
                noise_losses(&[a], &signal, &[sigma], reps, derive_seed(cell_seed, 1))[0][0]
            }))
        })
        .collect::<Result<_>>()?;
    MseEstimate::from_cells(&results, if noisy { reps } else { 1 })
}

/// Mean of the CLSE hat matrices over substreams `0..k` of `spec.seed`,
/// summed in stream order; also returns the stream-0 hat matrix.
fn averaged_hat(
    x: &DMatrix<f64>,
    spec: &ProjectionSpec,
    k: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut first = None;
    let mut sum = DMatrix::zeros(x.nrows(), x.nrows());
    for j in 0..k as u64 {
        let a = clse_hat(x, &sample_projection(&spec.stream(j))?)?;
        sum += &a;
        if j == 0 {
            first = Some(a);
        }
    }
    Ok((sum / k as f64, first.expect("k >= 1")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureTag {
    Fig1,
    Fig2,
    Fig3,
    Custom,
}

impl fmt::Display for FigureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FigureTag::Fig1 => "fig1",
            FigureTag::Fig2 => "fig2",
            FigureTag::Fig3 => "fig3",
            FigureTag::Custom => "custom",
        })
    }
}

impl FromStr for FigureTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fig1" | "1" => Ok(FigureTag::Fig1),
            "fig2" | "2" => Ok(FigureTag::Fig2),
            "fig3" | "3" => Ok(FigureTag::Fig3),
            "custom" => Ok(FigureTag::Custom),
            other => Err(Error::invalid(format!("unknown figure `{other}`"))),
        }
    }
}

/// One plotted series set: a header and numeric rows sorted by `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Panel {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Index of a column by name.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of one column, top to bottom.
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column(name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    /// CSV text; the count columns `d`, `k` and `failed_cells` print as
    /// integers, everything else in round-trip scientific notation.
    pub fn to_csv(&self) -> String {
        let integral: Vec<bool> = self
            .header
            .iter()
            .map(|h| matches!(h.as_str(), "d" | "k" | "failed_cells"))
            .collect();
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&integral)
                .map(|(v, &int)| {
                    if int {
                        format!("{}", *v as i64)
                    } else {
                        format_f64(*v)
                    }
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Output of a simulation or figure reproduction.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub tag: FigureTag,
    pub panels: Vec<Panel>,
    /// Config echo, seed and content hashes.
    pub sidecar: Sidecar,
}

impl ExperimentResult {
    fn new(tag: FigureTag, panels: Vec<Panel>, mut sidecar: Sidecar) -> Self {
        let inputs = sidecar.to_string();
        sidecar.set("input_hash", content_hash([inputs.as_bytes()]));
        let csvs: Vec<String> = panels.iter().map(Panel::to_csv).collect();
        sidecar.set(
            "output_hash",
            content_hash(csvs.iter().map(|s| s.as_bytes())),
        );
        sidecar.set("figure", tag);
        Self {
            tag,
            panels,
            sidecar,
        }
    }

    pub fn panel(&self, name: &str) -> Option<&Panel> {
        self.panels.iter().find(|p| p.name == name)
    }

    /// File stem for a panel: `<tag>_<panel>`.
    pub fn file_stem(&self, panel: &Panel) -> String {
        format!("{}_{}", self.tag, panel.name)
    }
}

/// Problem sizes for figure reproduction.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureSettings {
    pub p: usize,
    pub n: usize,
    /// Small-variance level of the spiked covariance.
    pub spike_eps: f64,
    /// Number of unit-variance directions of the spiked covariance.
    pub spike_d: usize,
    /// Noise variances of the `fig2` panels, left to right.
    pub sigma2_levels: Vec<f64>,
}

impl Default for FigureSettings {
    fn default() -> Self {
        Self {
            p: 20,
            n: 40,
            spike_eps: 1e-6,
            spike_d: 5,
            sigma2_levels: vec![0.0, 1.0 / 40.0, 1.0 / 20.0],
        }
    }
}

impl FigureSettings {
    pub fn to_sidecar(&self) -> Sidecar {
        let levels: Vec<String> = self.sigma2_levels.iter().map(|v| v.to_string()).collect();
        let mut s = Sidecar::new();
        s.set("p", self.p)
            .set("n", self.n)
            .set("spike_eps", self.spike_eps)
            .set("spike_d", self.spike_d)
            .set("sigma2_levels", levels.join(","));
        s
    }
}

/// Exact factor `1 − λ_i/η_i` against the bound `w_i` for the first and last
/// direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fig1Row {
    pub d: usize,
    pub exact_first: f64,
    pub exact_first_se: f64,
    pub w_first: f64,
    pub exact_last: f64,
    pub exact_last_se: f64,
    pub w_last: f64,
}

/// `fig1` series on `Σ_ii = 1/i`.
pub fn fig1(config: &McConfig, settings: &FigureSettings) -> Result<Vec<Fig1Row>> {
    let spectrum = Spectrum::inverse_index(settings.p)?;
    config.validate(spectrum.rank(), false)?;
    sorted_grid(&config.d_grid)
        .into_iter()
        .map(|d| {
            let eta = estimate_eta(
                &spectrum,
                d,
                config.num_projection_samples,
                derive_seed(config.base_seed, d as u64),
            )?;
            let w = shrinkage_factors(&spectrum, d)?.w;
            let last = settings.p - 1;
            Ok(Fig1Row {
                d,
                exact_first: 1.0 - eta.ratio[0],
                exact_first_se: eta.ratio_stderr[0],
                w_first: w[0],
                exact_last: 1.0 - eta.ratio[last],
                exact_last_se: eta.ratio_stderr[last],
                w_last: w[last],
            })
        })
        .collect()
}

/// Single versus averaged CLSE at one noise level, with theory overlays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fig2Row {
    pub sigma2: f64,
    pub d: usize,
    pub k: usize,
    pub single: f64,
    pub single_se: f64,
    pub averaged: f64,
    pub averaged_se: f64,
    pub exact_single: f64,
    pub thm2: f64,
    pub thm4: f64,
    pub thm4_se: f64,
}

/// `fig2` series on `Σ_ii = 1/i` with `β` the all-ones vector.
///
/// Each outer cell draws `K` projections; the averaged estimator uses all of
/// them and the single estimator the first, so the two curves share random
/// numbers. All noise levels share the same noise draws.
pub fn fig2(config: &McConfig, settings: &FigureSettings) -> Result<Vec<Fig2Row>> {
    let spectrum = Spectrum::inverse_index(settings.p)?;
    let x = design_from_spectrum(&spectrum, settings.n)?;
    let noisy = settings.sigma2_levels.iter().any(|&s| s > 0.0);
    config.validate(spectrum.rank(), noisy)?;
    let beta = vec![1.0; settings.p];
    let signal = x.values() * DVector::from_column_slice(&beta);
    let sigmas: Vec<f64> = settings
        .sigma2_levels
        .iter()
        .map(|s| s.max(0.0).sqrt())
        .collect();
    let noises: Vec<NoiseModel> = settings
        .sigma2_levels
        .iter()
        .map(|&s| NoiseModel::new(s))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for &k in &config.k_grid {
        let cells = (config.num_projection_samples / k).max(1);
        for d in sorted_grid(&config.d_grid) {
            let dk_seed = derive_seed(derive_seed(config.base_seed, k as u64), d as u64);
            let per_cell: Vec<Vec<Vec<f64>>> = (0..cells)
                .into_par_iter()
                .map(|c| {
                    let cell_seed = derive_seed(dk_seed, c as u64);
                    let spec = ProjectionSpec::new(
                        Family::Gaussian,
                        settings.p,
                        d,
                        derive_seed(cell_seed, 0),
                    )?;
                    let (avg, single) = averaged_hat(x.values(), &spec, k)?;
                    Ok(noise_losses(
                        &[single, avg],
                        &signal,
                        &sigmas,
                        config.num_noise_reps,
                        derive_seed(cell_seed, 1),
                    ))
                })
                .collect::<Result<_>>()?;

            let eta = estimate_eta(
                &spectrum,
                d,
                config.num_projection_samples,
                derive_seed(dk_seed, u64::MAX),
            )?;
            let tau = estimate_tau(&eta);
            for (s, (&sigma2, &noise)) in settings.sigma2_levels.iter().zip(&noises).enumerate() {
                let stat = |which: usize| {
                    let mut m = Moments::default();
                    per_cell.iter().for_each(|c| m.push(c[which][s]));
                    m
                };
                let (single, averaged) = (stat(0), stat(1));
                let exact = exact_mse_from_eta(&spectrum, &beta, noise, &eta)?;
                let thm2 = theorem2_bound(&spectrum, &beta, noise, d)?;
                let thm4 = theorem4_bound(&spectrum, &beta, noise, d, &tau)?;
                rows.push(Fig2Row {
                    sigma2,
                    d,
                    k,
                    single: single.mean(),
                    single_se: single.stderr(),
                    averaged: averaged.mean(),
                    averaged_se: averaged.stderr(),
                    exact_single: exact.total,
                    thm2: thm2.total,
                    thm4: thm4.total,
                    thm4_se: thm4.total_stderr.unwrap_or(0.0),
                });
            }
        }
    }
    rows.sort_by(|a, b| {
        a.sigma2
            .total_cmp(&b.sigma2)
            .then(a.k.cmp(&b.k))
            .then(a.d.cmp(&b.d))
    });
    Ok(rows)
}

/// Covariance families of `fig3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fig3Covariance {
    Identity,
    InverseIndex,
    Spiked,
}

impl Fig3Covariance {
    pub const ALL: [Fig3Covariance; 3] = [
        Fig3Covariance::Identity,
        Fig3Covariance::InverseIndex,
        Fig3Covariance::Spiked,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Fig3Covariance::Identity => "identity",
            Fig3Covariance::InverseIndex => "inverse_index",
            Fig3Covariance::Spiked => "spiked",
        }
    }

    fn kind(&self, settings: &FigureSettings) -> SyntheticKind {
        match self {
            Fig3Covariance::Identity => SyntheticKind::Identity,
            Fig3Covariance::InverseIndex => SyntheticKind::InverseIndex,
            Fig3Covariance::Spiked => SyntheticKind::Spiked {
                d: settings.spike_d,
                eps: settings.spike_eps,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fig3Row {
    pub covariance: Fig3Covariance,
    pub d: usize,
    pub tau: f64,
    pub tau_se: f64,
    pub lower: f64,
    pub upper: f64,
}

/// `fig3` series: `τ` against `[d²/p, d]` for the three covariances.
pub fn fig3(config: &McConfig, settings: &FigureSettings) -> Result<Vec<Fig3Row>> {
    let mut rows = Vec::new();
    for (ci, cov) in Fig3Covariance::ALL.iter().enumerate() {
        let spectrum = match cov.kind(settings) {
            SyntheticKind::Identity => Spectrum::isotropic(1.0, settings.p)?,
            SyntheticKind::InverseIndex => Spectrum::inverse_index(settings.p)?,
            SyntheticKind::Spiked { d, eps } => Spectrum::spiked(d, eps, settings.p)?,
        };
        config.validate(spectrum.rank(), false)?;
        let cov_seed = derive_seed(config.base_seed, ci as u64);
        for d in sorted_grid(&config.d_grid) {
            let eta = estimate_eta(
                &spectrum,
                d,
                config.num_projection_samples,
                derive_seed(cov_seed, d as u64),
            )?;
            let tau = estimate_tau(&eta);
            rows.push(Fig3Row {
                covariance: *cov,
                d,
                tau: tau.tau,
                tau_se: tau.stderr,
                lower: tau.lower(),
                upper: tau.upper(),
            });
        }
    }
    Ok(rows)
}

fn sorted_grid(grid: &[usize]) -> Vec<usize> {
    let mut g = grid.to_vec();
    g.sort_unstable();
    g.dedup();
    g
}

/// Run a figure reproduction and lay its series out as CSV panels.
///
/// * fig1: panels `first` and `last` with `(d, exact, exact_se, w)`.
/// * fig2: one panel per noise level, left to right, with
///   `(d, k, mse_single, …, mse_averaged, …, thm2, thm4, …)`.
/// * fig3: one panel per covariance with `(d, tau, tau_se, lower, upper)`.
pub fn reproduce_figure(
    tag: FigureTag,
    config: &McConfig,
    settings: &FigureSettings,
) -> Result<ExperimentResult> {
    let mut sidecar = config.to_sidecar();
    sidecar.extend(&settings.to_sidecar());
    let panels = match tag {
        FigureTag::Fig1 => {
            let rows = fig1(config, settings)?;
            let header = ["d", "exact_factor", "exact_factor_se", "w"];
            let mut first = Panel::new("first", &header);
            let mut last = Panel::new("last", &header);
            for r in rows {
                first
                    .rows
                    .push(vec![r.d as f64, r.exact_first, r.exact_first_se, r.w_first]);
                last.rows
                    .push(vec![r.d as f64, r.exact_last, r.exact_last_se, r.w_last]);
            }
            sidecar.set("covariance", "inverse_index");
            vec![first, last]
        }
        FigureTag::Fig2 => {
            let rows = fig2(config, settings)?;
            let header = [
                "d",
                "k",
                "mse_single",
                "mse_single_se",
                "mse_averaged",
                "mse_averaged_se",
                "exact_single",
                "thm2",
                "thm4",
                "thm4_se",
            ];
            let names = ["left", "middle", "right"];
            let mut panels: Vec<Panel> = settings
                .sigma2_levels
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let name = names
                        .get(i)
                        .map(|n| n.to_string())
                        .unwrap_or_else(|| format!("panel{i}"));
                    sidecar.set(format!("panel_{name}_sigma2"), s);
                    Panel::new(name, &header)
                })
                .collect();
            for r in rows {
                let idx = settings
                    .sigma2_levels
                    .iter()
                    .position(|&s| s == r.sigma2)
                    .expect("row noise level comes from the settings");
                panels[idx].rows.push(vec![
                    r.d as f64,
                    r.k as f64,
                    r.single,
                    r.single_se,
                    r.averaged,
                    r.averaged_se,
                    r.exact_single,
                    r.thm2,
                    r.thm4,
                    r.thm4_se,
                ]);
            }
            sidecar
                .set("covariance", "inverse_index")
                .set("beta", "ones");
            panels
        }
        FigureTag::Fig3 => {
            let rows = fig3(config, settings)?;
            let header = ["d", "tau", "tau_se", "lower", "upper"];
            Fig3Covariance::ALL
                .iter()
                .map(|cov| {
                    let mut panel = Panel::new(cov.name(), &header);
                    for r in rows.iter().filter(|r| r.covariance == *cov) {
                        panel
                            .rows
                            .push(vec![r.d as f64, r.tau, r.tau_se, r.lower, r.upper]);
                    }
                    panel
                })
                .collect()
        }
        FigureTag::Custom => {
            return Err(Error::invalid("custom experiments are run with `simulate`"))
        }
    };
    Ok(ExperimentResult::new(tag, panels, sidecar))
}

/// Empirical MSE on a design in its principal-component basis, alongside
/// the matching theory.
///
/// * CLSE/ACLSE: one row per `d` in `config.d_grid` (and per `K` in
///   `config.k_grid` for ACLSE) with the bound and exact columns.
/// * Row compression: one row per compressed sample count `m` taken from
///   `config.d_grid`; theory columns are `NaN`.
/// * OLS/ridge: a single row with `d = p`; theory columns are `NaN`.
pub fn simulate(
    x: &DesignMatrix,
    spectrum: &Spectrum,
    beta: &[f64],
    noise: NoiseModel,
    template: McMethod,
    config: &McConfig,
) -> Result<ExperimentResult> {
    let noisy = noise.sigma2() > 0.0;
    let header = [
        "d",
        "k",
        "empirical_mse",
        "stderr",
        "thm1",
        "thm2",
        "exact_thm3",
        "thm4",
        "failed_cells",
    ];
    let mut panel = Panel::new(template.name(), &header);
    let nan4 = [f64::NAN; 4];
    let push = |panel: &mut Panel, d: usize, k: usize, est: MseEstimate, theory: [f64; 4]| {
        let mut row = vec![d as f64, k as f64, est.mean, est.stderr];
        row.extend(theory);
        row.push(est.failed_cells as f64);
        panel.rows.push(row);
    };
    let cell_config = |d: usize, k: usize| McConfig {
        base_seed: derive_seed(derive_seed(config.base_seed, k as u64), d as u64),
        ..config.clone()
    };
    match template {
        McMethod::Clse { family, .. } | McMethod::Aclse { family, .. } => {
            config.validate(spectrum.rank(), noisy)?;
            let ks: Vec<usize> = match template {
                McMethod::Aclse { .. } => sorted_grid(&config.k_grid),
                _ => vec![1],
            };
            for d in sorted_grid(&config.d_grid) {
                let eta = estimate_eta(
                    spectrum,
                    d,
                    config.num_projection_samples,
                    derive_seed(config.base_seed, d as u64),
                )?;
                let tau = estimate_tau(&eta);
                let theory = [
                    crate::theory::theorem1_bound(spectrum, beta, noise, d)?.total,
                    theorem2_bound(spectrum, beta, noise, d)?.total,
                    exact_mse_from_eta(spectrum, beta, noise, &eta)?.total,
                    theorem4_bound(spectrum, beta, noise, d, &tau)?.total,
                ];
                for &k in &ks {
                    let method = match template {
                        McMethod::Aclse { .. } => McMethod::Aclse { family, d, k },
                        _ => McMethod::Clse { family, d },
                    };
                    let est = empirical_mse(x, beta, noise, method, &cell_config(d, k))?;
                    push(&mut panel, d, k, est, theory);
                }
            }
        }
        McMethod::RowCompressed { family, .. } => {
            config.validate(x.n(), noisy)?;
            for m in sorted_grid(&config.d_grid) {
                let est = empirical_mse(
                    x,
                    beta,
                    noise,
                    McMethod::RowCompressed { family, m },
                    &cell_config(m, 1),
                )?;
                push(&mut panel, m, 1, est, nan4);
            }
        }
        McMethod::Ols | McMethod::Ridge { .. } => {
            config.validate(x.p(), noisy)?;
            let est = empirical_mse(x, beta, noise, template, &cell_config(x.p(), 1))?;
            push(&mut panel, x.p(), 1, est, nan4);
        }
    }
    let mut sidecar = config.to_sidecar();
    sidecar
        .set("method", template.name())
        .set("sigma2", noise.sigma2());
    if let McMethod::Ridge { lambda } = template {
        sidecar.set("lambda", lambda);
    }
    Ok(ExperimentResult::new(
        FigureTag::Custom,
        vec![panel],
        sidecar,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{synthetic_design, ResponseVector};
    use crate::estimators::{aclse_fit, clse_fit_with, ols_fit, ridge_fit, row_compressed_with};

    fn small_config(m: usize, r: usize, seed: u64) -> McConfig {
        McConfig {
            num_projection_samples: m,
            num_noise_reps: r,
            base_seed: seed,
            d_grid: vec![2, 4],
            k_grid: vec![5],
        }
    }

    fn random_design(n: usize, p: usize, seed: u64) -> DesignMatrix {
        let mut rng = rng_for(seed);
        DesignMatrix::new(DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    #[test]
    fn hat_matrices_reproduce_fits() {
        let x = random_design(15, 6, 3);
        let y = ResponseVector::new(DVector::from_fn(15, |i, _| (i as f64).sin())).unwrap();
        for family in [Family::Gaussian, Family::Srht, Family::Sign] {
            let op = sample_projection(&ProjectionSpec::new(family, 6, 3, 11).unwrap()).unwrap();
            let fit = clse_fit_with(&x, &y, &op, None).unwrap();
            let via_hat = clse_hat(x.values(), &op).unwrap() * y.values();
            assert!((x.values() * &fit.beta_original - via_hat).amax() < 1e-10);
        }
        let op =
            sample_projection(&ProjectionSpec::new(Family::Gaussian, 15, 10, 5).unwrap()).unwrap();
        let fit = row_compressed_with(&x, &y, &op, RankPolicy::Reject).unwrap();
        let via_hat = row_compressed_hat(x.values(), &op).unwrap() * y.values();
        assert!((x.values() * &fit.beta_original - via_hat).amax() < 1e-10);

        let spec = ProjectionSpec::new(Family::Gaussian, 6, 2, 99).unwrap();
        let fit = aclse_fit(&x, &y, &spec, 4).unwrap();
        let (avg, _) = averaged_hat(x.values(), &spec, 4).unwrap();
        assert!((x.values() * &fit.beta_original - avg * y.values()).amax() < 1e-10);

        let fit = ols_fit(&x, &y, RankPolicy::Reject).unwrap();
        let hat = x.values() * ols_smoother_checked(x.values(), RankPolicy::Reject).unwrap();
        assert!((x.values() * &fit.beta_original - hat * y.values()).amax() < 1e-10);
        let fit = ridge_fit(&x, &y, 0.7).unwrap();
        let hat = x.values() * ridge_smoother(x.values(), 0.7).unwrap();
        assert!((x.values() * &fit.beta_original - hat * y.values()).amax() < 1e-10);
    }

    #[test]
    fn orthonormal_eta_matches_closed_form() {
        let s = Spectrum::isotropic(2.0, 10).unwrap();
        let eta = estimate_eta(&s, 4, 4000, 1).unwrap();
        for (e, se) in eta.eta.iter().zip(&eta.stderr) {
            assert!((e - 5.0).abs() <= 3.0 * se + 1e-12, "eta {e} se {se}");
        }
        assert_eq!(eta.resampled, 0);
    }

    #[test]
    fn trace_identity_holds_per_sample() {
        let s = Spectrum::inverse_index(12).unwrap();
        let eta = estimate_eta(&s, 5, 500, 2).unwrap();
        let (sum, _) = eta.trace_identity();
        assert!((sum - 5.0).abs() < 1e-9);
    }

    #[test]
    fn eta_independent_of_thread_count() {
        let s = Spectrum::inverse_index(8).unwrap();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| estimate_eta(&s, 3, 1000, 5).unwrap());
        let b = four.install(|| estimate_eta(&s, 3, 1000, 5).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn tau_lower_bound_for_identity() {
        let s = Spectrum::isotropic(1.0, 20).unwrap();
        let tau = estimate_tau(&estimate_eta(&s, 4, 4000, 3).unwrap());
        assert!((tau.tau - 0.8).abs() <= 3.0 * tau.stderr, "{tau:?}");
    }

    #[test]
    fn zero_signal_zero_noise_is_exactly_zero() {
        let (x, _) = synthetic_design(SyntheticKind::InverseIndex, 12, 6).unwrap();
        let cfg = small_config(100, 100, 1);
        for method in [
            McMethod::Ols,
            McMethod::Ridge { lambda: 0.3 },
            McMethod::Clse {
                family: Family::Gaussian,
                d: 3,
            },
            McMethod::Aclse {
                family: Family::Srht,
                d: 3,
                k: 4,
            },
            McMethod::RowCompressed {
                family: Family::Gaussian,
                m: 8,
            },
        ] {
            let est = empirical_mse(&x, &[0.0; 6], NoiseModel::noiseless(), method, &cfg).unwrap();
            assert_eq!(est.mean, 0.0, "{method:?}");
        }
    }

    #[test]
    fn ols_risk_is_sigma2_p() {
        let x = random_design(20, 5, 8);
        let noise = NoiseModel::new(0.3).unwrap();
        let est = empirical_mse(
            &x,
            &[1.0; 5],
            noise,
            McMethod::Ols,
            &small_config(200, 100, 4),
        )
        .unwrap();
        assert!((est.mean - 1.5).abs() <= 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn empirical_mse_is_deterministic() {
        let (x, _) = synthetic_design(SyntheticKind::InverseIndex, 12, 6).unwrap();
        let noise = NoiseModel::new(0.1).unwrap();
        let cfg = small_config(200, 100, 9);
        let method = McMethod::Clse {
            family: Family::Gaussian,
            d: 3,
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| empirical_mse(&x, &[1.0; 6], noise, method, &cfg).unwrap());
        let b = four.install(|| empirical_mse(&x, &[1.0; 6], noise, method, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let mut cfg = McConfig::default();
        assert!(cfg.validate(20, true).is_ok());
        assert!(cfg.validate(10, true).is_err());
        cfg.num_noise_reps = 10;
        assert!(cfg.validate(20, true).is_err());
        assert!(cfg.validate(20, false).is_ok());
        cfg.num_projection_samples = 50;
        assert!(cfg.validate(20, false).is_err());
    }

    #[test]
    fn panel_csv_layout() {
        let mut p = Panel::new("x", &["d", "v"]);
        p.rows.push(vec![3.0, 0.25]);
        assert_eq!(p.to_csv(), "d,v\n3,2.5000000000000000e-1\n");
        assert_eq!(p.series("v").unwrap(), vec![0.25]);
    }

    #[test]
    fn figure_tags_parse() {
        assert_eq!("fig2".parse::<FigureTag>().unwrap(), FigureTag::Fig2);
        assert!("fig9".parse::<FigureTag>().is_err());
    }
}
