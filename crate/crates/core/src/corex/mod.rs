//! Gaussianization, Gaussian total correlation, the modular linear factor
//! model and property-to-factor grouping.

pub mod assign;
pub mod gaussianize;
pub mod model;
pub mod report;
pub mod tc;

use thiserror::Error;

pub use assign::{assign_factors, encode, gaussian_mi, pearson, FactorAssignment};
pub use gaussianize::{gaussianize, probit, Gaussianizer};
pub use model::{fit, CorexModel, FitConfig, Moments};
pub use report::{build_report, LatentFactorReport};
pub use tc::total_correlation_gaussian;

#[derive(Debug, Error)]
pub enum CorexError {
    #[error("need at least {needed} rows, got {rows}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("{factors} factors requested for {properties} properties")]
    TooManyFactors { factors: usize, properties: usize },
    #[error("expected {expected} columns, got {found}")]
    ColumnMismatch { expected: usize, found: usize },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("singular covariance: {0}")]
    Singular(String),
    #[error("loss became non-finite at iteration {iteration}")]
    Diverged { iteration: usize, trace: Vec<f64> },
    #[error("shape error: {0}")]
    Shape(String),
}
