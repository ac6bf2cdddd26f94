//! Binary and JSONL formats for pools, matrices and fitted models.
//!
//! Matrix layout (`ILFM`, version 1), all integers little-endian:
//!
//! ```text
//! b"ILFM" | u8 version=1 | u32 rows | u32 cols | u8 flag (0 real, 1 binarized)
//! | rows*cols f32, row-major
//! ```
//!
//! Model layout (`ILFC`, version 1):
//!
//! ```text
//! b"ILFC" | u8 version=1 | u32 m | u32 p | u64 seed | f64 noise_var
//! | u32 trace_len | trace_len f64 | m*p f64 weights, row-major
//! | u32 columns | per column: u32 n, n f64 sorted reference values
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corex::{CorexModel, Gaussianizer};
use crate::linker::CompatibilityMatrix;
use crate::proposer::{canonicalize, Property, PropertyPool};

pub const MATRIX_MAGIC: &[u8; 4] = b"ILFM";
pub const MATRIX_VERSION: u8 = 1;
pub const MODEL_MAGIC: &[u8; 4] = b"ILFC";
pub const MODEL_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    Magic { expected: String, found: String },
    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u8, found: u8 },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("invalid artifact: {0}")]
    Invalid(String),
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| ArtifactError::Invalid(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// matrices

pub fn encode_matrix(m: &CompatibilityMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + 4 * m.values().len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.push(MATRIX_VERSION);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    out.push(u8::from(m.is_binarized()));
    for v in m.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<CompatibilityMatrix, ArtifactError> {
    let mut r = Reader::new(bytes);
    r.magic(MATRIX_MAGIC)?;
    r.version(MATRIX_VERSION)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let binarized = match r.u8()? {
        0 => false,
        1 => true,
        f => return Err(ArtifactError::Invalid(format!("unknown matrix flag {f}"))),
    };
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| ArtifactError::Invalid("matrix dimensions overflow".into()))?;
    if r.remaining() < n * 4 {
        return Err(ArtifactError::Truncated(format!(
            "expected {} value bytes, found {}",
            n * 4,
            r.remaining()
        )));
    }
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(r.f32()?);
    }
    if r.remaining() != 0 {
        return Err(ArtifactError::Invalid(format!(
            "{} trailing bytes after matrix values",
            r.remaining()
        )));
    }
    CompatibilityMatrix::from_parts(rows, cols, values, binarized).map_err(|e| ArtifactError::Invalid(e.to_string()))
}

pub fn save_matrix(path: impl AsRef<Path>, m: &CompatibilityMatrix) -> Result<(), ArtifactError> {
    write_atomic(path.as_ref(), &encode_matrix(m))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<CompatibilityMatrix, ArtifactError> {
    decode_matrix(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// property pools

#[derive(Debug, Serialize, Deserialize)]
struct PropertyLine {
    pid: u32,
    text: String,
    source_doc_ids: Vec<String>,
}

pub fn encode_pool(pool: &PropertyPool) -> Vec<u8> {
    let mut sources: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for (doc, pid) in pool.positives() {
        sources.entry(*pid).or_default().push(doc.clone());
    }
    let mut out = Vec::new();
    for p in pool.properties() {
        let line = PropertyLine {
            pid: p.pid,
            text: p.text.clone(),
            source_doc_ids: sources.remove(&p.pid).unwrap_or_default(),
        };
        super::write_jsonl_line(&mut out, &line).expect("writing to a Vec cannot fail");
    }
    out
}

pub fn decode_pool(reader: impl BufRead) -> Result<PropertyPool, ArtifactError> {
    let mut properties = Vec::new();
    let mut positives = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PropertyLine = serde_json::from_str(&line)
            .map_err(|e| ArtifactError::Invalid(format!("properties line {}: {e}", idx + 1)))?;
        for doc in rec.source_doc_ids {
            positives.insert((doc, rec.pid));
        }
        properties.push(Property {
            pid: rec.pid,
            canonical_key: canonicalize(&rec.text),
            text: rec.text,
        });
    }
    PropertyPool::from_parts(properties, positives).map_err(|e| ArtifactError::Invalid(e.to_string()))
}

pub fn save_pool(path: impl AsRef<Path>, pool: &PropertyPool) -> Result<(), ArtifactError> {
    write_atomic(path.as_ref(), &encode_pool(pool))
}

pub fn load_pool(path: impl AsRef<Path>) -> Result<PropertyPool, ArtifactError> {
    decode_pool(BufReader::new(fs::File::open(path)?))
}

// ---------------------------------------------------------------------------
// models

pub fn encode_model(model: &CorexModel, gaussianizer: &Gaussianizer) -> Vec<u8> {
    let w = model.weights();
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_VERSION);
    out.extend_from_slice(&(w.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(w.ncols() as u32).to_le_bytes());
    out.extend_from_slice(&model.seed().to_le_bytes());
    out.extend_from_slice(&model.noise_var().to_le_bytes());
    out.extend_from_slice(&(model.loss_trace().len() as u32).to_le_bytes());
    for v in model.loss_trace() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in w.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let refs = gaussianizer.references();
    out.extend_from_slice(&(refs.len() as u32).to_le_bytes());
    for col in refs {
        out.extend_from_slice(&(col.len() as u32).to_le_bytes());
        for v in col {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<(CorexModel, Gaussianizer), ArtifactError> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    r.version(MODEL_VERSION)?;
    let m = r.u32()? as usize;
    let p = r.u32()? as usize;
    let seed = r.u64()?;
    let noise_var = r.f64()?;
    let trace_len = r.u32()? as usize;
    let trace = (0..trace_len).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let weights = (0..m * p).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let weights = Array2::from_shape_vec((m, p), weights).map_err(|e| ArtifactError::Invalid(e.to_string()))?;
    let cols = r.u32()? as usize;
    let mut refs = Vec::with_capacity(cols);
    for _ in 0..cols {
        let n = r.u32()? as usize;
        refs.push((0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?);
    }
    if r.remaining() != 0 {
        return Err(ArtifactError::Invalid(format!(
            "{} trailing bytes after model",
            r.remaining()
        )));
    }
    let model =
        CorexModel::from_parts(weights, noise_var, trace, seed).map_err(|e| ArtifactError::Invalid(e.to_string()))?;
    let gaussianizer = Gaussianizer::from_references(refs).map_err(|e| ArtifactError::Invalid(e.to_string()))?;
    if gaussianizer.columns() != model.num_properties() {
        return Err(ArtifactError::Invalid(format!(
            "model has {} properties but gaussianizer has {} columns",
            model.num_properties(),
            gaussianizer.columns()
        )));
    }
    Ok((model, gaussianizer))
}

pub fn save_model(
    path: impl AsRef<Path>,
    model: &CorexModel,
    gaussianizer: &Gaussianizer,
) -> Result<(), ArtifactError> {
    write_atomic(path.as_ref(), &encode_model(model, gaussianizer))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(CorexModel, Gaussianizer), ArtifactError> {
    decode_model(&fs::read(path)?)
}

// ---------------------------------------------------------------------------

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N], ArtifactError> {
        if self.remaining() < N {
            return Err(ArtifactError::Truncated(format!(
                "needed {N} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), ArtifactError> {
        let found = self.take::<4>()?;
        if &found != expected {
            return Err(ArtifactError::Magic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(&found).into_owned(),
            });
        }
        Ok(())
    }

    fn version(&mut self, expected: u8) -> Result<(), ArtifactError> {
        let found = self.u8()?;
        if found != expected {
            return Err(ArtifactError::Version { expected, found });
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8, ArtifactError> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, ArtifactError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, ArtifactError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32, ArtifactError> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, ArtifactError> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_pool_round_trips() {
        let pool = PropertyPool::default();
        let bytes = encode_pool(&pool);
        assert!(bytes.is_empty());
        let back = decode_pool(&bytes[..]).unwrap();
        assert_eq!(back, pool);
    }

    #[test]
    fn small_matrix_is_byte_identical() {
        let values: Vec<f32> = (0..12).map(|i| i as f32 * 0.37 - 1.5).collect();
        let m = CompatibilityMatrix::from_parts(3, 4, values, false).unwrap();
        let bytes = encode_matrix(&m);
        assert_eq!(&bytes[..4], b"ILFM");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..9], &3u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &4u32.to_le_bytes());
        assert_eq!(bytes[13], 0);
        assert_eq!(bytes.len(), 14 + 48);
        let back = decode_matrix(&bytes).unwrap();
        assert_eq!(encode_matrix(&back), bytes);
    }

    #[test]
    fn random_matrix_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f32> = (0..100 * 50).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let m = CompatibilityMatrix::from_parts(100, 50, values.clone(), false).unwrap();
        let back = decode_matrix(&encode_matrix(&m)).unwrap();
        assert_eq!(back.rows(), 100);
        assert_eq!(back.cols(), 50);
        for (a, b) in back.values().iter().zip(&values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn matrix_errors() {
        let m = CompatibilityMatrix::from_parts(2, 2, vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
        let mut bytes = encode_matrix(&m);
        assert!(matches!(
            decode_matrix(&bytes[..bytes.len() - 1]),
            Err(ArtifactError::Truncated(_))
        ));
        assert!(matches!(decode_matrix(&bytes[..3]), Err(ArtifactError::Truncated(_))));
        bytes[4] = 2;
        assert!(matches!(
            decode_matrix(&bytes),
            Err(ArtifactError::Version { found: 2, .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(decode_matrix(&bytes), Err(ArtifactError::Magic { .. })));
    }

    #[test]
    fn model_errors() {
        assert!(matches!(decode_model(b"ILFM\x01"), Err(ArtifactError::Magic { .. })));
        assert!(matches!(
            decode_model(b"ILFC\x01\x02"),
            Err(ArtifactError::Truncated(_))
        ));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("a.bin");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        let leftovers: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
