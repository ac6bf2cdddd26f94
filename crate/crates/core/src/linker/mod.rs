//! Document–property compatibility: dual-encoder scoring, training, matrix
//! materialization and top-fraction binarization.

pub mod embedding;
pub mod encoder;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus_store::Document;
use crate::proposer::PropertyPool;
pub use embedding::{EmbedError, EmbeddingProvider, HashingEmbedder, HttpEmbedder, TableEmbedder};
pub use encoder::{train_encoder, Encoder, Head, TrainConfig};

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error("pool has no positive pairs")]
    NoPositives,
    #[error("batch size {batch} exceeds the {positives} positive pairs")]
    BatchTooLarge { batch: usize, positives: usize },
    #[error("pool is empty")]
    EmptyPool,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("need at least two candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("positive score is not among the candidates")]
    PositiveMissing,
    #[error("matrix is already binarized")]
    AlreadyBinarized,
    #[error("fraction {0} is outside (0, 1)")]
    Fraction(f64),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
}

/// Φ(c)·Φ(x).
pub fn score(property: &str, document: &str, encoder: &Encoder) -> Result<f64, LinkError> {
    let v = encoder.encode_batch(&[property, document])?;
    Ok(encoder::dot(&v[0], &v[1]))
}

/// exp(pos) / Σ exp(candidates), with max subtraction. `candidates` must
/// contain `pos`.
pub fn softmax_link_probability(pos: f64, candidates: &[f64]) -> Result<f64, LinkError> {
    if candidates.len() < 2 {
        return Err(LinkError::TooFewCandidates(candidates.len()));
    }
    if !pos.is_finite() || candidates.iter().any(|s| !s.is_finite()) {
        return Err(LinkError::NonFinite("candidate scores".into()));
    }
    if !candidates.contains(&pos) {
        return Err(LinkError::PositiveMissing);
    }
    let max = candidates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = candidates.iter().map(|s| (s - max).exp()).sum();
    Ok((pos - max).exp() / z)
}

/// Dense N×P score matrix, row-major `f32`. Rows follow corpus order, columns
/// follow pids.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
    binarized: bool,
}

impl CompatibilityMatrix {
    pub fn from_parts(rows: usize, cols: usize, values: Vec<f32>, binarized: bool) -> Result<Self, LinkError> {
        if values.len() != rows * cols {
            return Err(LinkError::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LinkError::NonFinite(format!("matrix entry {i}")));
        }
        if binarized && values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(LinkError::Shape("binarized matrix holds values outside {0, 1}".into()));
        }
        Ok(Self {
            rows,
            cols,
            values,
            binarized,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_binarized(&self) -> bool {
        self.binarized
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    /// A new matrix with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> CompatibilityMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        CompatibilityMatrix {
            rows: rows.len(),
            cols: self.cols,
            values,
            binarized: self.binarized,
        }
    }

    pub fn to_array(&self) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_fn((self.rows, self.cols), |(i, j)| f64::from(self.get(i, j)))
    }
}

/// Scores every document against every pool property: row i is W·Φ(x_i)
/// where W stacks Φ(c_j).
pub fn materialize_matrix(
    documents: &[&Document],
    pool: &PropertyPool,
    encoder: &Encoder,
) -> Result<CompatibilityMatrix, LinkError> {
    if pool.is_empty() {
        return Err(LinkError::EmptyPool);
    }
    let prop_texts: Vec<&str> = pool.texts().collect();
    let weights = encoder.encode_batch(&prop_texts)?;
    let doc_texts: Vec<&str> = documents.iter().map(|d| d.text.as_str()).collect();
    let reps = encoder.encode_batch(&doc_texts)?;
    let values: Vec<f32> = reps
        .par_iter()
        .flat_map_iter(|x| weights.iter().map(move |w| encoder::dot(w, x) as f32))
        .collect();
    CompatibilityMatrix::from_parts(documents.len(), pool.len(), values, false)
}

/// Sets the top `round(fraction·N·P)` entries to 1 and the rest to 0. Ties at
/// the threshold go to the lower (row, col) position.
pub fn binarize(m: &CompatibilityMatrix, fraction: f64) -> Result<CompatibilityMatrix, LinkError> {
    if m.binarized {
        return Err(LinkError::AlreadyBinarized);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(LinkError::Fraction(fraction));
    }
    let total = m.values.len();
    let k = (fraction * total as f64).round() as usize;
    let mut out = vec![0.0f32; total];
    if k > 0 {
        let mut idx: Vec<usize> = (0..total).collect();
        let cmp = |a: &usize, b: &usize| m.values[*b].total_cmp(&m.values[*a]).then(a.cmp(b));
        if k < total {
            idx.select_nth_unstable_by(k - 1, cmp);
        }
        for &i in &idx[..k] {
            out[i] = 1.0;
        }
    }
    CompatibilityMatrix::from_parts(m.rows, m.cols, out, true)
}
