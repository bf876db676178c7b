//! C ABI over the `taan` crate.
//!
//! Models and Gram caches are opaque handles owned by the caller and
//! released with the matching `_free` function. Every fallible call returns
//! a [`TaanStatus`]; on failure the message is available from
//! [`taan_last_error_message`] on the same thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use taan::apl::{AplCoordinates, BasisGrid};
use taan::metrics::{build_gram, distance_matrix, distance_sq, inner_product, GaussianMixture, GramCache};
use taan::network::TaanModel;
use taan::{Matrix, TaanError};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaanStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numeric = 4,
    UnknownTask = 5,
    Io = 6,
    Parse = 7,
    Panic = 8,
}

/// Opaque trained model.
pub struct TaanModelHandle {
    model: TaanModel,
}

/// Opaque Gram cache for one basis grid and mixture.
pub struct TaanGramHandle {
    cache: GramCache,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &TaanError) -> TaanStatus {
    match e {
        TaanError::InvalidArgument(_) | TaanError::Config(_) | TaanError::EmptyDataset(_) => {
            TaanStatus::InvalidArgument
        }
        TaanError::Shape(_) => TaanStatus::Shape,
        TaanError::Numeric(_) | TaanError::DegenerateFunction { .. } => TaanStatus::Numeric,
        TaanError::UnknownTask { .. } => TaanStatus::UnknownTask,
        TaanError::Io { .. } => TaanStatus::Io,
        TaanError::Parse { .. } | TaanError::Serde(_) => TaanStatus::Parse,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (TaanStatus, String)>) -> TaanStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TaanStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TaanStatus::Panic
        }
    }
}

fn fail(e: TaanError) -> (TaanStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (TaanStatus, String) {
    (TaanStatus::NullPointer, format!("{name} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, (TaanStatus, String)> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn as_slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], (TaanStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), (TaanStatus, String)> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn emit<T>(out: *mut *mut T, value: T, name: &str) -> Result<(), (TaanStatus, String)> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(Box::into_raw(Box::new(value)));
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn taan_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a JSON checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn taan_model_load(path: *const c_char, out: *mut *mut TaanModelHandle) -> TaanStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (TaanStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let model = TaanModel::load_checkpoint(Path::new(path)).map_err(fail)?;
        emit(out, TaanModelHandle { model }, "out")
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must come from [`taan_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn taan_model_free(model: *mut TaanModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn taan_model_task_count(model: *const TaanModelHandle, out: *mut usize) -> TaanStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        write_out(out, m.model.task_count(), "out")
    })
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn taan_model_input_dim(model: *const TaanModelHandle, out: *mut usize) -> TaanStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        write_out(out, m.model.arch().input_dim, "out")
    })
}

/// Output width of `task`'s head.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn taan_model_output_dim(model: *const TaanModelHandle, task: usize, out: *mut usize) -> TaanStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let dims = &m.model.arch().output_dims;
        let d = dims.get(task).copied().ok_or_else(|| {
            fail(TaanError::UnknownTask {
                task,
                task_count: dims.len(),
            })
        })?;
        write_out(out, d, "out")
    })
}

/// Forward pass for `task` on `rows` row-major inputs of width
/// `cols`. Writes `rows * output_dim` values to `output`.
///
/// # Safety
/// `input` must hold `rows * cols` values and `output` `output_len` values.
#[no_mangle]
pub unsafe extern "C" fn taan_model_forward(
    model: *const TaanModelHandle,
    task: usize,
    input: *const f64,
    rows: usize,
    cols: usize,
    output: *mut f64,
    output_len: usize,
) -> TaanStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let x = as_slice(input, rows * cols, "input")?;
        let x = Matrix::from_vec(rows, cols, x.to_vec()).map_err(fail)?;
        let y = m.model.predict(task, &x).map_err(fail)?;
        if output.is_null() {
            return Err(null("output"));
        }
        if output_len != y.as_slice().len() {
            return Err((
                TaanStatus::Shape,
                format!("output buffer holds {output_len} values, forward produced {}", y.as_slice().len()),
            ));
        }
        slice::from_raw_parts_mut(output, output_len).copy_from_slice(y.as_slice());
        Ok(())
    })
}

/// Gram cache for the model's own grid and mixture.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn taan_model_gram(model: *const TaanModelHandle, out: *mut *mut TaanGramHandle) -> TaanStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let cache = build_gram(m.model.grid(), m.model.mixture());
        emit(out, TaanGramHandle { cache }, "out")
    })
}

/// Gram cache for `basis_count` evenly spaced breakpoints on `[lo, hi]`
/// under a standard normal weighting.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn taan_gram_new_uniform(basis_count: usize, lo: f64, hi: f64, out: *mut *mut TaanGramHandle) -> TaanStatus {
    guard(|| {
        let grid = BasisGrid::uniform(basis_count, lo, hi).map_err(fail)?;
        let cache = build_gram(&grid, &GaussianMixture::standard_normal());
        emit(out, TaanGramHandle { cache }, "out")
    })
}

/// Releases a Gram handle; null is ignored.
///
/// # Safety
/// `gram` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn taan_gram_free(gram: *mut TaanGramHandle) {
    if !gram.is_null() {
        drop(Box::from_raw(gram));
    }
}

/// # Safety
/// `gram` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn taan_gram_basis_count(gram: *const TaanGramHandle, out: *mut usize) -> TaanStatus {
    guard(|| {
        let g = as_ref(gram, "gram")?;
        write_out(out, g.cache.basis_count(), "out")
    })
}

/// Gaussian-weighted inner product of two activations given by their
/// coordinate vectors of length `len`.
///
/// # Safety
/// `c1` and `c2` must hold `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn taan_inner_product(
    gram: *const TaanGramHandle,
    c1: *const f64,
    c2: *const f64,
    len: usize,
    out: *mut f64,
) -> TaanStatus {
    guard(|| {
        let g = as_ref(gram, "gram")?;
        let v = inner_product(as_slice(c1, len, "c1")?, as_slice(c2, len, "c2")?, &g.cache).map_err(fail)?;
        write_out(out, v, "out")
    })
}

/// Squared functional distance between two activations.
///
/// # Safety
/// `c1` and `c2` must hold `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn taan_distance_sq(
    gram: *const TaanGramHandle,
    c1: *const f64,
    c2: *const f64,
    len: usize,
    out: *mut f64,
) -> TaanStatus {
    guard(|| {
        let g = as_ref(gram, "gram")?;
        let v = distance_sq(as_slice(c1, len, "c1")?, as_slice(c2, len, "c2")?, &g.cache).map_err(fail)?;
        write_out(out, v, "out")
    })
}

/// Pairwise distances of `tasks` row-major coordinate rows of width
/// `basis_count`; writes `tasks * tasks` values to `out`.
///
/// # Safety
/// `alpha` must hold `tasks * basis_count` values and `out` `tasks * tasks`.
#[no_mangle]
pub unsafe extern "C" fn taan_distance_matrix(
    gram: *const TaanGramHandle,
    alpha: *const f64,
    tasks: usize,
    basis_count: usize,
    out: *mut f64,
) -> TaanStatus {
    guard(|| {
        let g = as_ref(gram, "gram")?;
        let a = as_slice(alpha, tasks * basis_count, "alpha")?;
        let coords = Matrix::from_vec(tasks, basis_count, a.to_vec())
            .and_then(AplCoordinates::new)
            .map_err(fail)?;
        let d = distance_matrix(&coords, &g.cache).map_err(fail)?;
        if out.is_null() {
            return Err(null("out"));
        }
        slice::from_raw_parts_mut(out, tasks * tasks).copy_from_slice(d.as_slice());
        Ok(())
    })
}
