//! Compressed least-squares regression via random projections.
//!
//! * [`design`]: data ingestion, centering and the principal-component basis.
//! * [`projections`]: Gaussian, sign, sparse and SRHT projection operators.
//! * [`estimators`]: OLS, ridge, row-compressed OLS, CLSE and ACLSE fits and
//!   cross-validated choice of the projection dimension.
//! * [`theory`]: closed-form MSE bounds and exact expressions.
//! * [`montecarlo`]: estimation of the implicit quantities `η_i` and `τ`,
//!   empirical MSE and figure reproduction.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod error;
pub mod estimators;
pub mod montecarlo;
pub mod numeric;
pub mod projections;
pub mod provenance;
pub mod theory;

pub use design::{DesignMatrix, NoiseModel, ResponseVector, Spectrum, SyntheticKind};
pub use error::{Error, Result};
pub use estimators::{FitResult, Method, RankPolicy};
pub use montecarlo::{ExperimentResult, McConfig, McMethod, MseEstimate};
pub use projections::{Family, ProjectionOperator, ProjectionSpec};
pub use theory::{EtaEstimates, MseReport, TauEstimate};
