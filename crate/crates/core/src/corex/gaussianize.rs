use log::warn;
use ndarray::{Array2, ArrayView2};
use statrs::distribution::{ContinuousCDF, Normal};

use super::CorexError;

/// Per-column rank-based inverse-normal transform. Keeps each training
/// column's sorted values so unseen rows map through the same ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussianizer {
    references: Vec<Vec<f64>>,
}

pub fn probit(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

impl Gaussianizer {
    pub fn from_references(references: Vec<Vec<f64>>) -> Result<Self, CorexError> {
        for (j, col) in references.iter().enumerate() {
            if col.is_empty() {
                return Err(CorexError::Shape(format!("reference column {j} is empty")));
            }
            if col.windows(2).any(|w| !(w[0] <= w[1])) {
                return Err(CorexError::Shape(format!("reference column {j} is not sorted")));
            }
        }
        Ok(Self { references })
    }

    /// Fits on `data` (N×P, N ≥ 3) and returns the transformed data.
    pub fn fit(data: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Self), CorexError> {
        let (n, p) = data.dim();
        if n < 3 {
            return Err(CorexError::TooFewRows { rows: n, needed: 3 });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CorexError::NonFinite("gaussianize input".into()));
        }
        let references: Vec<Vec<f64>> = (0..p)
            .map(|j| {
                let mut col = data.column(j).to_vec();
                col.sort_by(f64::total_cmp);
                if col[0] == col[n - 1] {
                    warn!("column {j} is constant; gaussianized to zeros");
                }
                col
            })
            .collect();
        let g = Self { references };
        let out = g.transform(data)?;
        Ok((out, g))
    }

    pub fn columns(&self) -> usize {
        self.references.len()
    }

    pub fn references(&self) -> &[Vec<f64>] {
        &self.references
    }

    /// Maps a value through column `col`: with L reference values below it
    /// and E equal, the quantile is (L + E/2)/n, clamped to
    /// [0.5/n, 1 − 0.5/n]. On the training data this is Probit((r − 0.5)/n)
    /// with r the average rank.
    pub fn map_value(&self, col: usize, value: f64) -> f64 {
        let reference = &self.references[col];
        let n = reference.len() as f64;
        let less = reference.partition_point(|&r| r < value);
        let less_eq = reference.partition_point(|&r| r <= value);
        let equal = less_eq - less;
        let u = (less as f64 + equal as f64 / 2.0) / n;
        let u = u.clamp(0.5 / n, 1.0 - 0.5 / n);
        if (u - 0.5).abs() < 1e-15 {
            return 0.0;
        }
        probit(u)
    }

    pub fn transform(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>, CorexError> {
        if rows.ncols() != self.columns() {
            return Err(CorexError::ColumnMismatch {
                expected: self.columns(),
                found: rows.ncols(),
            });
        }
        Ok(Array2::from_shape_fn(rows.dim(), |(i, j)| {
            self.map_value(j, rows[[i, j]])
        }))
    }
}

/// Gaussianizes every column of `data`.
pub fn gaussianize(data: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Gaussianizer), CorexError> {
    Gaussianizer::fit(data)
}
