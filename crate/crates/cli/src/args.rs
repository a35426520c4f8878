//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::grid::Grid;

#[derive(Debug, Parser)]
#[command(
    name = "sketchreg",
    version,
    about = "Compressed least-squares regression with random projections",
    long_about = "Fit compressed least-squares estimators, evaluate their MSE bounds, \
                  run seeded Monte Carlo simulations and reproduce the reference figures.\n\n\
                  Any flag may also be given in a key=value file passed with --config; \
                  flags on the command line take precedence over the file, and the \
                  SKETCHREG_SEED environment variable is used only when neither sets a seed."
)]
pub struct Cli {
    /// key=value file supplying default flags for the subcommand (keys are long flag names)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for Monte Carlo and averaging (count; default: all cores). Results do not depend on it
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a regression model to a CSV file (predictors, response in the last column)
    Fit(FitArgs),
    /// Evaluate closed-form MSE bounds over a grid of projection dimensions
    Bounds(BoundsArgs),
    /// Measure empirical MSE by Monte Carlo on a synthetic design
    Simulate(SimulateArgs),
    /// Reproduce the data series of a reference figure
    Reproduce(ReproduceArgs),
    /// Apply a random projection to the columns or rows of a CSV file
    Project(ProjectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ols,
    Ridge,
    Row,
    Clse,
    Aclse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Sign,
    Sparse,
    Srht,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CovarianceArg {
    /// Σ = I
    Identity,
    /// Σ_ii = 1/i
    InverseIndex,
    /// Σ_ii = 1 for i ≤ spike-d, spike-eps otherwise
    Spiked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FigureArg {
    Fig1,
    Fig2,
    Fig3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    /// Compress variables: X·φ (n × d)
    Columns,
    /// Compress samples: ψ·X and ψ·Y (m × p)
    Rows,
}

/// Projection family options shared by several subcommands.
#[derive(Debug, Args)]
pub struct ProjectionArgs {
    /// Projection family
    #[arg(long, value_enum, default_value_t = FamilyArg::Gaussian)]
    pub family: FamilyArg,

    /// Fraction of non-zero entries for the sparse family (probability in (0, 1])
    #[arg(long, value_name = "FRACTION", default_value_t = 1.0 / 3.0)]
    pub density: f64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct FitArgs {
    /// Input CSV: predictors followed by the response column
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    /// Output CSV of coefficients, one per row; a `.meta` sidecar is written next to it
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,

    /// The input's first row is a header
    #[arg(long)]
    pub has_header: bool,

    /// Fit on the raw data instead of column-centered X and centered Y
    #[arg(long)]
    pub no_center: bool,

    /// Estimator
    #[arg(long, value_enum, default_value_t = MethodArg::Clse)]
    pub method: MethodArg,

    /// Projection dimension for clse/aclse (number of compressed variables)
    #[arg(long, value_name = "D")]
    pub d: Option<usize>,

    /// Number of averaged projections for aclse (count)
    #[arg(long, value_name = "K", default_value_t = 1)]
    pub k: usize,

    /// Compressed sample count for row compression (rows, m ≥ p)
    #[arg(long, value_name = "M")]
    pub m: Option<usize>,

    /// Ridge penalty added to XᵀX (same units as XᵀX, ≥ 0)
    #[arg(long, value_name = "LAMBDA")]
    pub lambda: Option<f64>,

    /// Experimental ridge penalty on γ for clse (no MSE theory covers it)
    #[arg(long, value_name = "LAMBDA")]
    pub gamma_penalty: Option<f64>,

    /// Return the minimum-norm solution instead of failing on rank-deficient OLS problems
    #[arg(long)]
    pub min_norm: bool,

    /// Choose d for clse by cross-validation over this grid (e.g. `1..15` or `2,4,8`)
    #[arg(long, value_name = "GRID")]
    pub cv_grid: Option<Grid>,

    /// Cross-validation folds (count)
    #[arg(long, value_name = "FOLDS", default_value_t = 5)]
    pub folds: usize,

    /// Use the one-standard-error choice of d instead of the minimizer
    #[arg(long)]
    pub one_se: bool,

    #[command(flatten)]
    pub projection: ProjectionArgs,

    /// Base random seed (64-bit unsigned integer)
    #[arg(long, env = "SKETCHREG_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct BoundsArgs {
    /// Gram eigenvalues, one per row, non-increasing (principal-component basis)
    #[arg(long, value_name = "FILE", conflicts_with = "covariance")]
    pub spectrum: Option<PathBuf>,

    /// Built-in spectrum instead of --spectrum
    #[arg(long, value_enum)]
    pub covariance: Option<CovarianceArg>,

    /// Number of variables for --covariance (count)
    #[arg(long, value_name = "P", default_value_t = 20)]
    pub p: usize,

    /// Small variance of the spiked covariance (variance units, in (0, 1])
    #[arg(long, value_name = "EPS", default_value_t = 1e-6)]
    pub spike_eps: f64,

    /// Number of unit-variance directions of the spiked covariance (count)
    #[arg(long, value_name = "D", default_value_t = 5)]
    pub spike_d: usize,

    /// Coefficients in the principal-component basis, one per row (default: all ones)
    #[arg(long, value_name = "FILE")]
    pub beta: Option<PathBuf>,

    /// Noise variance σ² (response units squared, ≥ 0)
    #[arg(long, value_name = "SIGMA2", default_value_t = 0.0)]
    pub sigma2: f64,

    /// Projection dimensions (e.g. `1..15`)
    #[arg(long, value_name = "GRID")]
    pub d: Grid,

    /// Projection draws used to estimate τ (count)
    #[arg(long, value_name = "M", default_value_t = 20_000)]
    pub samples: usize,

    /// Output CSV with columns d, thm1, thm2, thm4, ridge_at_matched_lambda, …
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,

    /// Base random seed (64-bit unsigned integer)
    #[arg(long, env = "SKETCHREG_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SimulateArgs {
    /// Covariance of the synthetic design
    #[arg(long, value_enum, default_value_t = CovarianceArg::InverseIndex)]
    pub covariance: CovarianceArg,

    /// Number of variables (count)
    #[arg(long, value_name = "P", default_value_t = 20)]
    pub p: usize,

    /// Number of samples (count, ≥ p)
    #[arg(long, value_name = "N", default_value_t = 40)]
    pub n: usize,

    /// Small variance of the spiked covariance (variance units, in (0, 1])
    #[arg(long, value_name = "EPS", default_value_t = 1e-6)]
    pub spike_eps: f64,

    /// Number of unit-variance directions of the spiked covariance (count)
    #[arg(long, value_name = "D", default_value_t = 5)]
    pub spike_d: usize,

    /// True coefficients, one per row (default: all ones)
    #[arg(long, value_name = "FILE")]
    pub beta: Option<PathBuf>,

    /// Noise variance σ² (response units squared, ≥ 0)
    #[arg(long, value_name = "SIGMA2", default_value_t = 0.0)]
    pub sigma2: f64,

    /// Estimator
    #[arg(long, value_enum, default_value_t = MethodArg::Clse)]
    pub method: MethodArg,

    /// Projection dimensions (for row compression: compressed sample counts)
    #[arg(long, value_name = "GRID", default_value = "1..15")]
    pub d: Grid,

    /// Averaged projections for aclse (e.g. `100` or `10,100`)
    #[arg(long, value_name = "GRID", default_value = "100")]
    pub k: Grid,

    /// Ridge penalty (same units as XᵀX, ≥ 0)
    #[arg(long, value_name = "LAMBDA", default_value_t = 1.0)]
    pub lambda: f64,

    #[command(flatten)]
    pub projection: ProjectionArgs,

    /// Projection draws M (count)
    #[arg(long, value_name = "M", default_value_t = 20_000)]
    pub samples: usize,

    /// Noise draws R per projection cell (count)
    #[arg(long, value_name = "R", default_value_t = 500)]
    pub reps: usize,

    /// Output CSV, one row per (d, k)
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,

    /// Base random seed (64-bit unsigned integer)
    #[arg(long, env = "SKETCHREG_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ReproduceArgs {
    /// Figure to reproduce
    #[arg(long, value_enum)]
    pub figure: FigureArg,

    /// Directory receiving `<figure>_<panel>.csv` files and `<figure>.meta`
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub output_dir: PathBuf,

    /// Projection dimensions (count grid)
    #[arg(long, value_name = "GRID", default_value = "1..15")]
    pub d: Grid,

    /// Averaged projections for fig2 (count grid)
    #[arg(long, value_name = "GRID", default_value = "100")]
    pub k: Grid,

    /// Projection draws M (count)
    #[arg(long, value_name = "M", default_value_t = 20_000)]
    pub samples: usize,

    /// Noise draws R per projection cell (count)
    #[arg(long, value_name = "R", default_value_t = 500)]
    pub reps: usize,

    /// Number of variables (count)
    #[arg(long, value_name = "P", default_value_t = 20)]
    pub p: usize,

    /// Number of samples (count, ≥ p)
    #[arg(long, value_name = "N", default_value_t = 40)]
    pub n: usize,

    /// Small variance of the spiked covariance (variance units, in (0, 1])
    #[arg(long, value_name = "EPS", default_value_t = 1e-6)]
    pub spike_eps: f64,

    /// Number of unit-variance directions of the spiked covariance (count)
    #[arg(long, value_name = "D", default_value_t = 5)]
    pub spike_d: usize,

    /// Base random seed (64-bit unsigned integer)
    #[arg(long, env = "SKETCHREG_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ProjectArgs {
    /// Input CSV: predictors followed by the response column
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,

    /// Output CSV in the same layout (compressed predictors, then response)
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,

    /// The input's first row is a header
    #[arg(long)]
    pub has_header: bool,

    /// Which dimension to compress
    #[arg(long, value_enum, default_value_t = RoleArg::Columns)]
    pub role: RoleArg,

    /// Target dimension: d variables (columns) or m samples (rows)
    #[arg(long, value_name = "D")]
    pub d: usize,

    #[command(flatten)]
    pub projection: ProjectionArgs,

    /// Base random seed (64-bit unsigned integer)
    #[arg(long, env = "SKETCHREG_SEED", default_value_t = 0)]
    pub seed: u64,
}
