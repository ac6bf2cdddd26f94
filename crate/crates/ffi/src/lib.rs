//! C ABI over the goalfactor library.
//!
//! Objects are opaque handles created by `*_load`/`*_new` functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`GfStatus`]; on failure `gf_last_error()` describes what went wrong on the
//! calling thread. Output pointers are only written on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use goalfactor::corex::{total_correlation_gaussian, CorexModel, Gaussianizer};
use goalfactor::corpus_store::artifact;
use goalfactor::corpus_store::{load_corpus, Corpus};
use goalfactor::linker::{binarize, CompatibilityMatrix};
use ndarray::ArrayView2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    InvalidArgument = 5,
    BufferTooSmall = 6,
    Numeric = 7,
    Panic = 99,
}

pub struct GfCorpus {
    inner: Corpus,
}

pub struct GfMatrix {
    inner: CompatibilityMatrix,
}

pub struct GfModel {
    model: CorexModel,
    gaussianizer: Gaussianizer,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl ToString) {
    let msg = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

type Result<T> = std::result::Result<T, (GfStatus, String)>;

fn guard(f: impl FnOnce() -> Result<()>) -> GfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GfStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GfStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<()> {
    if p.is_null() {
        Err((GfStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf> {
    non_null(p, "path")?;
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|e| (GfStatus::InvalidUtf8, e.to_string()))
}

fn artifact_err(e: artifact::ArtifactError) -> (GfStatus, String) {
    let status = match e {
        artifact::ArtifactError::Io(_) => GfStatus::Io,
        _ => GfStatus::Format,
    };
    (status, e.to_string())
}

fn boxed<T>(out: *mut *mut T, value: T) {
    // SAFETY: callers check `out` for null before building `value`.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next goalfactor call on the same thread.
#[no_mangle]
pub extern "C" fn gf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn gf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// corpus

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_corpus_load(path: *const c_char, out: *mut *mut GfCorpus) -> GfStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let corpus = load_corpus(&path).map_err(|e| {
            let status = match e {
                goalfactor::corpus_store::CorpusError::Io { .. } => GfStatus::Io,
                _ => GfStatus::Format,
            };
            (status, e.to_string())
        })?;
        boxed(out, GfCorpus { inner: corpus });
        Ok(())
    })
}

/// # Safety
/// `corpus` must come from `gf_corpus_load` and not be freed.
#[no_mangle]
pub unsafe extern "C" fn gf_corpus_len(corpus: *const GfCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.inner.len())
}

/// # Safety
/// `corpus` must come from `gf_corpus_load` (or be null) and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn gf_corpus_free(corpus: *mut GfCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

// ---------------------------------------------------------------------------
// matrices

/// Reads an `ILFM` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_matrix_load(path: *const c_char, out: *mut *mut GfMatrix) -> GfStatus {
    guard(|| {
        non_null(out, "out")?;
        let m = artifact::load_matrix(path_arg(path)?).map_err(artifact_err)?;
        boxed(out, GfMatrix { inner: m });
        Ok(())
    })
}

/// Copies `rows * cols` row-major scores into a new real-valued matrix.
///
/// # Safety
/// `values` must point to `rows * cols` floats and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn gf_matrix_new(
    rows: usize,
    cols: usize,
    values: *const f32,
    out: *mut *mut GfMatrix,
) -> GfStatus {
    guard(|| {
        non_null(out, "out")?;
        let len = rows
            .checked_mul(cols)
            .ok_or((GfStatus::InvalidArgument, "rows * cols overflows".to_string()))?;
        let data = if len == 0 {
            Vec::new()
        } else {
            non_null(values, "values")?;
            std::slice::from_raw_parts(values, len).to_vec()
        };
        let m = CompatibilityMatrix::from_parts(rows, cols, data, false)
            .map_err(|e| (GfStatus::InvalidArgument, e.to_string()))?;
        boxed(out, GfMatrix { inner: m });
        Ok(())
    })
}

/// # Safety
/// `matrix` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gf_matrix_save(matrix: *const GfMatrix, path: *const c_char) -> GfStatus {
    guard(|| {
        non_null(matrix, "matrix")?;
        artifact::save_matrix(path_arg(path)?, &(*matrix).inner).map_err(artifact_err)
    })
}

/// # Safety
/// `matrix` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gf_matrix_rows(matrix: *const GfMatrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.inner.rows())
}

/// # Safety
/// `matrix` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gf_matrix_cols(matrix: *const GfMatrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.inner.cols())
}

/// 1 when binarized, 0 otherwise (including null).
///
/// # Safety
/// `matrix` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gf_matrix_is_binarized(matrix: *const GfMatrix) -> i32 {
    matrix.as_ref().map_or(0, |m| m.inner.is_binarized() as i32)
}

/// Copies the row-major values into `buf`, which must hold `rows * cols` floats.
///
/// # Safety
/// `buf` must be writable for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn gf_matrix_values(matrix: *const GfMatrix, buf: *mut f32, len: usize) -> GfStatus {
    guard(|| {
        non_null(matrix, "matrix")?;
        let values = (*matrix).inner.values();
        if len < values.len() {
            return Err((
                GfStatus::BufferTooSmall,
                format!("need {} floats, buffer holds {len}", values.len()),
            ));
        }
        if !values.is_empty() {
            non_null(buf, "buf")?;
            ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
        }
        Ok(())
    })
}

/// New matrix with the top `round(fraction * rows * cols)` entries set to 1.
///
/// # Safety
/// `matrix` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gf_matrix_binarize(
    matrix: *const GfMatrix,
    fraction: f64,
    out: *mut *mut GfMatrix,
) -> GfStatus {
    guard(|| {
        non_null(matrix, "matrix")?;
        non_null(out, "out")?;
        let m = binarize(&(*matrix).inner, fraction).map_err(|e| (GfStatus::InvalidArgument, e.to_string()))?;
        boxed(out, GfMatrix { inner: m });
        Ok(())
    })
}

/// # Safety
/// `matrix` must be a live handle or null and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn gf_matrix_free(matrix: *mut GfMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

// ---------------------------------------------------------------------------
// latent factor models

/// Reads a model file written by `goalfactor discover`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_model_load(path: *const c_char, out: *mut *mut GfModel) -> GfStatus {
    guard(|| {
        non_null(out, "out")?;
        let (model, gaussianizer) = artifact::load_model(path_arg(path)?).map_err(artifact_err)?;
        boxed(out, GfModel { model, gaussianizer });
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gf_model_num_factors(model: *const GfModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_factors())
}

/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gf_model_num_properties(model: *const GfModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_properties())
}

/// Latent coordinates of raw compatibility rows: gaussianize against the
/// training reference, then project. `rows` is `n * num_properties` row-major;
/// `z_out` receives `n * num_factors` values.
///
/// # Safety
/// Buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn gf_model_encode(
    model: *const GfModel,
    rows: *const f64,
    n: usize,
    z_out: *mut f64,
    z_len: usize,
) -> GfStatus {
    guard(|| {
        non_null(model, "model")?;
        let m = &*model;
        let p = m.model.num_properties();
        let k = m.model.num_factors();
        if z_len < n * k {
            return Err((
                GfStatus::BufferTooSmall,
                format!("need {} doubles, buffer holds {z_len}", n * k),
            ));
        }
        if n == 0 {
            return Ok(());
        }
        non_null(rows, "rows")?;
        non_null(z_out, "z_out")?;
        let view = ArrayView2::from_shape((n, p), std::slice::from_raw_parts(rows, n * p))
            .map_err(|e| (GfStatus::InvalidArgument, e.to_string()))?;
        let z = goalfactor::corex::encode(&m.model, &m.gaussianizer, view)
            .map_err(|e| (GfStatus::Numeric, e.to_string()))?;
        for (i, v) in z.iter().enumerate() {
            *z_out.add(i) = *v;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle or null and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn gf_model_free(model: *mut GfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---------------------------------------------------------------------------
// stateless helpers

/// Gaussian total correlation (nats) of an `n x p` row-major sample.
///
/// # Safety
/// `data` must hold `n * p` doubles and `tc_out` be writable.
#[no_mangle]
pub unsafe extern "C" fn gf_total_correlation(data: *const f64, n: usize, p: usize, tc_out: *mut f64) -> GfStatus {
    guard(|| {
        non_null(data, "data")?;
        non_null(tc_out, "tc_out")?;
        let view = ArrayView2::from_shape((n, p), std::slice::from_raw_parts(data, n * p))
            .map_err(|e| (GfStatus::InvalidArgument, e.to_string()))?;
        let tc = total_correlation_gaussian(view).map_err(|e| (GfStatus::Numeric, e.to_string()))?;
        *tc_out = tc;
        Ok(())
    })
}

/// Rank-based inverse normal transform of each column of an `n x p`
/// row-major sample, written to `out` (same shape).
///
/// # Safety
/// `data` and `out` must hold `n * p` doubles.
#[no_mangle]
pub unsafe extern "C" fn gf_gaussianize(data: *const f64, n: usize, p: usize, out: *mut f64) -> GfStatus {
    guard(|| {
        non_null(data, "data")?;
        non_null(out, "out")?;
        let view = ArrayView2::from_shape((n, p), std::slice::from_raw_parts(data, n * p))
            .map_err(|e| (GfStatus::InvalidArgument, e.to_string()))?;
        let (g, _) = goalfactor::corex::gaussianize(view).map_err(|e| (GfStatus::Numeric, e.to_string()))?;
        for (i, v) in g.iter().enumerate() {
            *out.add(i) = *v;
        }
        Ok(())
    })
}
