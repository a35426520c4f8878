//! Design matrices, responses and the Gram spectrum.
//!
//! All MSE theory in this crate is stated in the principal-component basis,
//! where `XᵀX = diag(λ_1, …, λ_p)`. [`pc_rotate`] moves an arbitrary design
//! into that basis and records the change of basis so coefficients can be
//! mapped back.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numeric::{check_finite, RANK_REL_TOL};

/// Off-diagonal tolerance (relative to the trace) for a rotated Gram matrix.
pub const DIAGONAL_REL_TOL: f64 = 1e-8;

/// An `n × p` fixed design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    column_means: DVector<f64>,
    rotation: Option<DMatrix<f64>>,
}

impl DesignMatrix {
    /// Wrap an uncentered matrix.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyInput);
        }
        check_finite(values.iter(), "design matrix")?;
        let p = values.ncols();
        Ok(Self {
            values,
            column_means: DVector::zeros(p),
            rotation: None,
        })
    }

    pub fn from_row_slice(n: usize, p: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * p {
            return Err(Error::Dim {
                expected: n * p,
                found: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n, p, data))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Means subtracted by [`DesignMatrix::centered`]; zero otherwise.
    pub fn column_means(&self) -> &DVector<f64> {
        &self.column_means
    }

    /// Orthogonal `V` such that `values = X_original · V`, if rotated.
    pub fn rotation(&self) -> Option<&DMatrix<f64>> {
        self.rotation.as_ref()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.values.tr_mul(&self.values)
    }

    /// Numerical rank: Gram eigenvalues below `1e-12·λ_1` count as zero.
    pub fn rank(&self) -> usize {
        crate::numeric::matrix_rank(&self.values)
    }

    /// Subtract column means. Means accumulate if called on centered data.
    pub fn centered(&self) -> Self {
        let n = self.n() as f64;
        let means =
            DVector::from_iterator(self.p(), self.values.column_iter().map(|c| c.sum() / n));
        let mut values = self.values.clone();
        for (j, mut col) in values.column_iter_mut().enumerate() {
            col.add_scalar_mut(-means[j]);
        }
        let column_means = &self.column_means + means;
        Self {
            values,
            column_means,
            rotation: self.rotation.clone(),
        }
    }

    /// Express original-basis coefficients in this design's basis (`Vᵀβ`).
    pub fn to_design_basis(&self, beta: &DVector<f64>) -> DVector<f64> {
        match &self.rotation {
            Some(v) => v.tr_mul(beta),
            None => beta.clone(),
        }
    }

    /// Map coefficients in this design's basis back to the original (`Vγ`).
    pub fn to_original_basis(&self, gamma: &DVector<f64>) -> DVector<f64> {
        match &self.rotation {
            Some(v) => v * gamma,
            None => gamma.clone(),
        }
    }

    pub fn predict(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        if beta.len() != self.p() {
            return Err(Error::Dim {
                expected: self.p(),
                found: beta.len(),
            });
        }
        Ok(&self.values * beta)
    }

    /// Submatrix of the given rows, keeping metadata.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(rows),
            column_means: self.column_means.clone(),
            rotation: self.rotation.clone(),
        }
    }
}

/// Response vector `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseVector {
    values: DVector<f64>,
}

impl ResponseVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        check_finite(values.iter(), "response")?;
        Ok(Self { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    /// Centered copy and the subtracted mean.
    pub fn centered(&self) -> (Self, f64) {
        let mean = self.values.mean();
        (
            Self {
                values: self.values.add_scalar(-mean),
            },
            mean,
        )
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(rows),
        }
    }

    pub(crate) fn check_matches(&self, x: &DesignMatrix) -> Result<()> {
        if self.len() != x.n() {
            return Err(Error::Dim {
                expected: x.n(),
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// Eigenvalues of the Gram matrix, sorted non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    trace: f64,
    alphas: Vec<f64>,
}

impl Spectrum {
    /// Build from eigenvalues that are already sorted non-increasing.
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::EmptyInput);
        }
        check_finite(eigenvalues.iter(), "spectrum")?;
        if eigenvalues.iter().any(|&l| l < 0.0) {
            return Err(Error::invalid("eigenvalues must be non-negative"));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("eigenvalues must be sorted non-increasing"));
        }
        let trace = crate::numeric::dd_sum(eigenvalues.iter().copied());
        if trace <= 0.0 {
            return Err(Error::invalid("spectrum trace must be positive"));
        }
        let alphas = eigenvalues.iter().map(|l| l / trace).collect();
        Ok(Self {
            eigenvalues,
            trace,
            alphas,
        })
    }

    /// `C·I_p`.
    pub fn isotropic(scale: f64, p: usize) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::invalid("isotropic scale must be positive"));
        }
        Self::new(vec![scale; p])
    }

    /// `Σ_ii = 1/i`.
    pub fn inverse_index(p: usize) -> Result<Self> {
        Self::new((1..=p).map(|i| 1.0 / i as f64).collect())
    }

    /// One for the first `d` directions, `eps` for the rest.
    pub fn spiked(d: usize, eps: f64, p: usize) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::invalid(format!("spiked eps must be > 0, got {eps}")));
        }
        if eps > 1.0 {
            return Err(Error::invalid("spiked eps must not exceed 1"));
        }
        if d == 0 || d > p {
            return Err(Error::invalid(format!("spiked d={d} must lie in 1..={p}")));
        }
        Self::new((0..p).map(|i| if i < d { 1.0 } else { eps }).collect())
    }

    pub fn p(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `s = Σλ_i`.
    pub fn trace(&self) -> f64 {
        self.trace
    }

    /// Proportions of total variance `λ_i / s`.
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Count of eigenvalues above `1e-12·λ_1`.
    pub fn rank(&self) -> usize {
        let cutoff = RANK_REL_TOL * self.eigenvalues[0];
        self.eigenvalues.iter().filter(|&&l| l > cutoff).count()
    }
}

/// Noise variance `σ²` of the i.i.d. errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma2: f64,
}

impl NoiseModel {
    pub fn new(sigma2: f64) -> Result<Self> {
        if !sigma2.is_finite() || sigma2 < 0.0 {
            return Err(Error::invalid(format!(
                "sigma2 must be finite and >= 0, got {sigma2}"
            )));
        }
        Ok(Self { sigma2 })
    }

    pub fn noiseless() -> Self {
        Self { sigma2: 0.0 }
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

/// Read a CSV whose last column is the response. `row` in errors is the
/// 1-based line number in the file.
pub fn load_csv(
    path: impl AsRef<Path>,
    has_header: bool,
) -> Result<(DesignMatrix, ResponseVector)> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_csv(&text, has_header)
}

/// Parse CSV text; see [`load_csv`].
pub fn parse_csv(text: &str, has_header: bool) -> Result<(DesignMatrix, ResponseVector)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut width: Option<usize> = None;
    let mut data = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            row: e.position().map(|p| p.line() as usize).unwrap_or(0),
            col: 0,
            message: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(rows + 1);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Ragged {
                row: line,
                expected,
                found: record.len(),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                col: col + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    col: col + 1,
                    message: format!("non-finite value: {cell:?}"),
                });
            }
            data.push(value);
        }
        rows += 1;
    }
    let width = match width {
        Some(w) if rows > 0 => w,
        _ => return Err(Error::EmptyInput),
    };
    if width < 2 {
        return Err(Error::invalid(
            "CSV needs at least one predictor and a response column",
        ));
    }
    let all = DMatrix::from_row_slice(rows, width, &data);
    let y = all.column(width - 1).into_owned();
    let x = all.columns(0, width - 1).into_owned();
    Ok((DesignMatrix::new(x)?, ResponseVector::new(y)?))
}

/// Format a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write `X | Y` in the input layout with 17-significant-digit floats.
pub fn write_csv<W: Write>(
    mut out: W,
    x: &DesignMatrix,
    y: &ResponseVector,
    header: Option<&[String]>,
) -> Result<()> {
    y.check_matches(x)?;
    let io = |e| Error::io("<csv writer>", e);
    if let Some(h) = header {
        writeln!(out, "{}", h.join(",")).map_err(io)?;
    }
    for i in 0..x.n() {
        let mut line: Vec<String> = x.values.row(i).iter().map(|&v| format_f64(v)).collect();
        line.push(format_f64(y.values[i]));
        writeln!(out, "{}", line.join(",")).map_err(io)?;
    }
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, x: &DesignMatrix, y: &ResponseVector) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_csv(&mut w, x, y, None)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rotate to the principal-component basis: `X̃ = X·V` with `X̃ᵀX̃`
/// diagonal and eigenvalues in non-increasing order.
///
/// Each eigenvector is signed so that its largest-magnitude entry is
/// positive. Within repeated eigenvalues the basis is arbitrary.
pub fn pc_rotate(x: &DesignMatrix) -> Result<(DesignMatrix, Spectrum)> {
    let p = x.p();
    let gram = x.gram();
    let eigen = SymmetricEigen::try_new(gram, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("eigendecomposition did not converge".into()))?;

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));

    let mut v = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eigen.eigenvectors.column(src).into_owned();
        let pivot = col
            .iter()
            .cloned()
            .fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
        if pivot < 0.0 {
            col.neg_mut();
        }
        v.set_column(dst, &col);
    }

    let rotated = &x.values * &v;
    // Diagonal from the rotated matrix itself rather than the eigen solver.
    let rotated_gram = rotated.tr_mul(&rotated);
    let lambda_max = rotated_gram.diagonal().max().max(0.0);
    let cutoff = RANK_REL_TOL * lambda_max;
    let mut eigenvalues: Vec<f64> = rotated_gram
        .diagonal()
        .iter()
        .map(|&l| if l > cutoff { l } else { 0.0 })
        .collect();
    // Re-sort in case rounding swapped near-ties.
    for i in 1..p {
        if eigenvalues[i] > eigenvalues[i - 1] {
            eigenvalues[i] = eigenvalues[i - 1];
        }
    }

    let trace = rotated_gram.trace();
    let off = off_diagonal_norm(&rotated_gram);
    if off > DIAGONAL_REL_TOL * trace.max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!(
            "rotated Gram not diagonal: off-diagonal norm {off:e} vs trace {trace:e}"
        )));
    }

    let rotation = match &x.rotation {
        Some(prev) => prev * &v,
        None => v,
    };
    let spectrum = Spectrum::new(eigenvalues)?;
    Ok((
        DesignMatrix {
            values: rotated,
            column_means: x.column_means.clone(),
            rotation: Some(rotation),
        },
        spectrum,
    ))
}

/// Frobenius norm of the off-diagonal part.
pub fn off_diagonal_norm(m: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j {
                acc += m[(i, j)] * m[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// Covariance families used by the fixtures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticKind {
    /// `Σ = I`.
    Identity,
    /// `Σ_ii = 1/i`.
    InverseIndex,
    /// `Σ_ii = 1` for `i ≤ d`, `eps` otherwise.
    Spiked { d: usize, eps: f64 },
}

/// Design with Gram matrix exactly `Σ`: `X = √Σ` stacked over `n − p` zero rows.
pub fn synthetic_design(
    kind: SyntheticKind,
    n: usize,
    p: usize,
) -> Result<(DesignMatrix, Spectrum)> {
    if p == 0 {
        return Err(Error::invalid("p must be at least 1"));
    }
    let spectrum = match kind {
        SyntheticKind::Identity => Spectrum::isotropic(1.0, p)?,
        SyntheticKind::InverseIndex => Spectrum::inverse_index(p)?,
        SyntheticKind::Spiked { d, eps } => Spectrum::spiked(d, eps, p)?,
    };
    let x = design_from_spectrum(&spectrum, n)?;
    Ok((x, spectrum))
}

/// `√diag(λ)` padded with zero rows to `n` rows.
pub fn design_from_spectrum(spectrum: &Spectrum, n: usize) -> Result<DesignMatrix> {
    let p = spectrum.p();
    if n < p {
        return Err(Error::invalid(format!(
            "need n >= p for an exact-spectrum design (n={n}, p={p})"
        )));
    }
    let mut values = DMatrix::zeros(n, p);
    for (i, &l) in spectrum.eigenvalues().iter().enumerate() {
        values[(i, i)] = l.sqrt();
    }
    let mut x = DesignMatrix::new(values)?;
    x.rotation = Some(DMatrix::identity(p, p));
    Ok(x)
}
