use nalgebra::DMatrix;
use ndarray::ArrayView2;

use super::CorexError;

pub const COVARIANCE_JITTER: f64 = 1e-6;

/// Gaussian total correlation in nats: ½(Σ log σ²_ii − log det Σ), computed on
/// the correlation matrix (diagonal jittered by 1e-6) so per-column scale
/// drops out. Clamped at zero.
pub fn total_correlation_gaussian(sample: ArrayView2<'_, f64>) -> Result<f64, CorexError> {
    let (n, p) = sample.dim();
    if n <= p + 1 {
        return Err(CorexError::TooFewRows { rows: n, needed: p + 2 });
    }
    let means: Vec<f64> = (0..p).map(|j| sample.column(j).sum() / n as f64).collect();
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for row in sample.rows() {
        for a in 0..p {
            let da = row[a] - means[a];
            for b in a..p {
                cov[(a, b)] += da * (row[b] - means[b]);
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let sd: Vec<f64> = (0..p).map(|a| cov[(a, a)].sqrt()).collect();
    if let Some(a) = sd.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(CorexError::Singular(format!("column {a} has zero variance")));
    }
    let mut corr = DMatrix::<f64>::from_fn(p, p, |a, b| cov[(a, b)] / (sd[a] * sd[b]));
    for a in 0..p {
        corr[(a, a)] = 1.0 + COVARIANCE_JITTER;
    }
    let chol = corr
        .cholesky()
        .ok_or_else(|| CorexError::Singular("covariance is not positive definite".into()))?;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let diag_log: f64 = p as f64 * (1.0 + COVARIANCE_JITTER).ln();
    Ok((0.5 * (diag_log - log_det)).max(0.0))
}
