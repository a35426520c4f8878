//! Random projection operators.
//!
//! An operator maps `input_dim → output_dim`. In the column role the input
//! is the number of variables `p` and the operator is `φ ∈ R^{p×d}`, applied
//! as `Xφ`. In the row role the input is the sample count `n` and the
//! operator acts as `ψ = φᵀ ∈ R^{m×n}`, applied as `ψX` and `ψY`.
//!
//! Every family is normalized so that `E[φφᵀ] = I`, matching i.i.d.
//! `N(0, 1/d)` Gaussian entries.
//!
//! Gaussian entries are drawn with `rand_distr::StandardNormal` (ziggurat)
//! on a ChaCha8 stream. Bit-exactness across builds is not promised.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::design::{DesignMatrix, ResponseVector};
use crate::error::{Error, Result};
use crate::provenance::Sidecar;

/// Golden-ratio increment separating substreams.
pub const SUBSTREAM_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Default density of the sparse family.
pub const DEFAULT_SPARSE_DENSITY: f64 = 1.0 / 3.0;

/// Seed of substream `k`: `base + k·0x9E3779B97F4A7C15` (wrapping).
pub fn substream_seed(base: u64, k: u64) -> u64 {
    base.wrapping_add(k.wrapping_mul(SUBSTREAM_STRIDE))
}

/// Deterministic RNG for a seed.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Gaussian,
    Sign,
    Sparse {
        density: f64,
    },
    Srht,
    /// A caller-supplied matrix; cannot be sampled.
    Explicit,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Sign => "sign",
            Family::Sparse { .. } => "sparse",
            Family::Srht => "srht",
            Family::Explicit => "explicit",
        }
    }

    pub fn sparse_default() -> Self {
        Family::Sparse {
            density: DEFAULT_SPARSE_DENSITY,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "sign" => Ok(Family::Sign),
            "sparse" => Ok(Family::sparse_default()),
            "srht" => Ok(Family::Srht),
            "explicit" => Ok(Family::Explicit),
            other => Err(Error::invalid(format!(
                "unknown projection family `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionSpec {
    pub family: Family,
    pub input_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
}

impl ProjectionSpec {
    pub fn new(family: Family, input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        let spec = Self {
            family,
            input_dim,
            output_dim,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 {
            return Err(Error::invalid("projection output dimension must be >= 1"));
        }
        if self.output_dim > self.input_dim {
            return Err(Error::invalid(format!(
                "projection output dimension {} exceeds input dimension {}",
                self.output_dim, self.input_dim
            )));
        }
        if let Family::Sparse { density } = self.family {
            if !(density > 0.0 && density <= 1.0) {
                return Err(Error::invalid(format!(
                    "sparse density must lie in (0, 1], got {density}"
                )));
            }
        }
        Ok(())
    }

    /// Magnitude of a nonzero entry (or the SRHT prefactor).
    pub fn scale(&self) -> f64 {
        let d = self.output_dim as f64;
        match self.family {
            Family::Sparse { density } => 1.0 / (d * density).sqrt(),
            Family::Explicit => 1.0,
            _ => 1.0 / d.sqrt(),
        }
    }

    /// Same spec on substream `k` of this seed.
    pub fn stream(&self, k: u64) -> Self {
        Self {
            seed: substream_seed(self.seed, k),
            ..*self
        }
    }

    pub fn with_dims(&self, input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            ..*self
        }
    }

    pub fn to_sidecar(&self) -> Sidecar {
        let mut s = Sidecar::new();
        s.set("family", self.family.name());
        if let Family::Sparse { density } = self.family {
            s.set("density", density);
        }
        s.set("input_dim", self.input_dim)
            .set("output_dim", self.output_dim)
            .set("seed", self.seed)
            .set("scale", self.scale());
        s
    }

    pub fn from_sidecar(s: &Sidecar) -> Result<Self> {
        let mut family: Family = s.parse_value("family")?;
        if let Family::Sparse { .. } = family {
            if s.get("density").is_some() {
                family = Family::Sparse {
                    density: s.parse_value("density")?,
                };
            }
        }
        Self::new(
            family,
            s.parse_value("input_dim")?,
            s.parse_value("output_dim")?,
            s.parse_value("seed")?,
        )
    }
}

/// SRHT internals: `φᵀ = scale · S · H · D` on the zero-padded input.
#[derive(Debug, Clone, PartialEq)]
pub struct SrhtState {
    signs: Vec<f64>,
    rows: Vec<usize>,
    padded_dim: usize,
}

impl SrhtState {
    /// Diagonal of `D`, length `padded_dim`.
    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    /// Rows of `H` kept by `S`, ascending.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    /// `φ`, shape `input_dim × output_dim`.
    Dense(DMatrix<f64>),
    Srht(SrhtState),
}

/// A sampled, immutable projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOperator {
    spec: ProjectionSpec,
    kind: Kind,
}

/// Draw an operator. Deterministic in `spec` (including the seed).
pub fn sample_projection(spec: &ProjectionSpec) -> Result<ProjectionOperator> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed);
    let (p, d) = (spec.input_dim, spec.output_dim);
    let scale = spec.scale();
    let kind = match spec.family {
        Family::Gaussian => Kind::Dense(DMatrix::from_fn(p, d, |_, _| {
            scale * rng.sample::<f64, _>(StandardNormal)
        })),
        Family::Sign => Kind::Dense(DMatrix::from_fn(p, d, |_, _| {
            if rng.random::<bool>() {
                scale
            } else {
                -scale
            }
        })),
        Family::Sparse { density } => Kind::Dense(DMatrix::from_fn(p, d, |_, _| {
            let keep = rng.random::<f64>() < density;
            let positive = rng.random::<bool>();
            match (keep, positive) {
                (false, _) => 0.0,
                (true, true) => scale,
                (true, false) => -scale,
            }
        })),
        Family::Srht => {
            let padded_dim = p.next_power_of_two();
            let signs = (0..padded_dim)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let mut rows = rand::seq::index::sample(&mut rng, padded_dim, d).into_vec();
            rows.sort_unstable();
            Kind::Srht(SrhtState {
                signs,
                rows,
                padded_dim,
            })
        }
        Family::Explicit => {
            return Err(Error::invalid(
                "explicit operators are constructed, not sampled",
            ))
        }
    };
    Ok(ProjectionOperator { spec: *spec, kind })
}

impl ProjectionOperator {
    /// Wrap an explicit `input_dim × output_dim` matrix.
    pub fn from_matrix(phi: DMatrix<f64>) -> Result<Self> {
        let spec = ProjectionSpec::new(Family::Explicit, phi.nrows(), phi.ncols(), 0)?;
        crate::numeric::check_finite(phi.iter(), "projection matrix")?;
        Ok(Self {
            spec,
            kind: Kind::Dense(phi),
        })
    }

    /// `d = p` identity embedding.
    pub fn identity(dim: usize) -> Result<Self> {
        Self::from_matrix(DMatrix::identity(dim, dim))
    }

    pub fn spec(&self) -> &ProjectionSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn srht_state(&self) -> Option<&SrhtState> {
        match &self.kind {
            Kind::Srht(s) => Some(s),
            Kind::Dense(_) => None,
        }
    }

    /// The explicit matrix for dense families.
    pub fn materialized(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            Kind::Dense(m) => Some(m),
            Kind::Srht(_) => None,
        }
    }

    /// `φ` as a dense `input_dim × output_dim` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.kind {
            Kind::Dense(m) => m.clone(),
            Kind::Srht(_) => {
                let p = self.input_dim();
                let mut phi = DMatrix::zeros(p, self.output_dim());
                let mut e = vec![0.0; p];
                for i in 0..p {
                    e[i] = 1.0;
                    let row = self.project_vector(&e);
                    phi.set_row(i, &row.transpose());
                    e[i] = 0.0;
                }
                phi
            }
        }
    }

    /// `φᵀv` for `v ∈ R^{input_dim}`.
    pub fn project_vector(&self, v: &[f64]) -> DVector<f64> {
        debug_assert_eq!(v.len(), self.input_dim());
        match &self.kind {
            Kind::Dense(m) => m.tr_mul(&DVector::from_column_slice(v)),
            Kind::Srht(state) => {
                let mut buf = vec![0.0; state.padded_dim];
                self.srht_project_into(state, v, &mut buf)
            }
        }
    }

    fn srht_project_into(&self, state: &SrhtState, v: &[f64], buf: &mut [f64]) -> DVector<f64> {
        for (slot, (x, s)) in buf
            .iter_mut()
            .zip(v.iter().chain(std::iter::repeat(&0.0)).zip(&state.signs))
        {
            *slot = x * s;
        }
        fwht(buf);
        let scale = self.spec.scale();
        DVector::from_iterator(state.rows.len(), state.rows.iter().map(|&r| scale * buf[r]))
    }

    /// `φγ` for `γ ∈ R^{output_dim}`: maps projected coefficients back.
    pub fn lift(&self, gamma: &DVector<f64>) -> Result<DVector<f64>> {
        if gamma.len() != self.output_dim() {
            return Err(Error::Dim {
                expected: self.output_dim(),
                found: gamma.len(),
            });
        }
        Ok(match &self.kind {
            Kind::Dense(m) => m * gamma,
            Kind::Srht(state) => {
                let mut buf = vec![0.0; state.padded_dim];
                for (&r, g) in state.rows.iter().zip(gamma.iter()) {
                    buf[r] = *g;
                }
                fwht(&mut buf);
                let scale = self.spec.scale();
                DVector::from_iterator(
                    self.input_dim(),
                    buf.iter()
                        .zip(&state.signs)
                        .take(self.input_dim())
                        .map(|(b, s)| scale * b * s),
                )
            }
        })
    }

    /// `Aφ` for a matrix with `input_dim` columns.
    pub fn project_columns(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.ncols() != self.input_dim() {
            return Err(Error::Dim {
                expected: self.input_dim(),
                found: a.ncols(),
            });
        }
        Ok(match &self.kind {
            Kind::Dense(m) => a * m,
            Kind::Srht(state) => {
                // Rows of `A` are contiguous columns of `Aᵀ`.
                let at = a.transpose();
                let scale = self.spec.scale();
                let mut out = DMatrix::zeros(a.nrows(), self.output_dim());
                let mut buf = vec![0.0; state.padded_dim];
                for i in 0..a.nrows() {
                    let row = at.column(i);
                    buf.fill(0.0);
                    for ((slot, x), s) in buf.iter_mut().zip(row.iter()).zip(&state.signs) {
                        *slot = x * s;
                    }
                    fwht(&mut buf);
                    for (k, &r) in state.rows.iter().enumerate() {
                        out[(i, k)] = scale * buf[r];
                    }
                }
                out
            }
        })
    }

    /// `φᵀA` for a matrix with `input_dim` rows (the row-compression role).
    pub fn project_rows(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.nrows() != self.input_dim() {
            return Err(Error::Dim {
                expected: self.input_dim(),
                found: a.nrows(),
            });
        }
        Ok(match &self.kind {
            Kind::Dense(m) => m.tr_mul(a),
            Kind::Srht(state) => {
                let mut out = DMatrix::zeros(self.output_dim(), a.ncols());
                let mut buf = vec![0.0; state.padded_dim];
                for j in 0..a.ncols() {
                    let projected = self.srht_project_into(state, a.column(j).as_slice(), &mut buf);
                    out.set_column(j, &projected);
                }
                out
            }
        })
    }
}

/// Column compression: `Xφ` (`n × d`).
pub fn apply_columns(op: &ProjectionOperator, x: &DesignMatrix) -> Result<DesignMatrix> {
    DesignMatrix::new(op.project_columns(x.values())?)
}

/// Row compression: `(ψX, ψY)` with `m = output_dim` rows.
pub fn apply_rows(
    op: &ProjectionOperator,
    x: &DesignMatrix,
    y: &ResponseVector,
) -> Result<(DesignMatrix, ResponseVector)> {
    y.check_matches(x)?;
    let px = op.project_rows(x.values())?;
    let py = op.project_rows(&DMatrix::from_column_slice(
        y.len(),
        1,
        y.values().as_slice(),
    ))?;
    Ok((
        DesignMatrix::new(px)?,
        ResponseVector::new(py.column(0).into_owned())?,
    ))
}

/// In-place unnormalized Walsh–Hadamard transform (Sylvester ordering).
///
/// Length must be a power of two.
pub fn fwht(data: &mut [f64]) {
    let n = data.len();
    assert!(n.is_power_of_two(), "fwht length {n} is not a power of two");
    let mut half = 1;
    while half < n {
        for block in data.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        half *= 2;
    }
}

/// Sylvester Hadamard matrix with integer entries, row-major `dim × dim`.
pub fn sylvester_hadamard(dim: usize) -> Result<Vec<Vec<i64>>> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::invalid(format!(
            "Hadamard dimension {dim} is not a power of two"
        )));
    }
    let mut h = vec![vec![1i64]];
    while h.len() < dim {
        let k = h.len();
        let mut next = vec![vec![0i64; 2 * k]; 2 * k];
        for i in 0..k {
            for j in 0..k {
                next[i][j] = h[i][j];
                next[i][j + k] = h[i][j];
                next[i + k][j] = h[i][j];
                next[i + k][j + k] = -h[i][j];
            }
        }
        h = next;
    }
    Ok(h)
}
