//! C ABI for the fpmc library.
//!
//! Handles are opaque pointers created and destroyed by this library; every
//! fallible call returns an [`FpmcStatus`] code and stores a message
//! retrievable with [`fpmc_last_error_message`]. Buffers are caller-owned:
//! functions write into `f64` arrays sized by the documented shape, never
//! allocating across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::sync::Arc;

use ndarray::ArrayView2;

use fpmc::classical::{fit_wiener, wiener_denoise_batch, WienerModel};
use fpmc::dataset::{load_dataset_auto, Dataset};
use fpmc::error::FpmcError;
use fpmc::model::FpmcModel;
use fpmc::sampler::{heun_sample_from, sample_prior, SamplerConfig};
use fpmc::schedule::{edm_time_grid, DiffusionSchedule};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpmcStatus {
    Ok = 0,
    /// Invalid arguments, bad shapes, violated preconditions.
    ValidationError = 2,
    /// Non-finite values or diverged computations.
    NumericalError = 3,
    /// File format or I/O problems.
    IoError = 4,
    /// A required pointer argument was null.
    NullPointer = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &FpmcError) -> FpmcStatus {
    match err {
        FpmcError::Validation(_) => FpmcStatus::ValidationError,
        FpmcError::Numerical(_) => FpmcStatus::NumericalError,
        FpmcError::Io(_) => FpmcStatus::IoError,
    }
}

fn fail(err: FpmcError) -> FpmcStatus {
    let code = status_of(&err);
    set_error(&err.to_string());
    code
}

fn null_fail(what: &str) -> FpmcStatus {
    set_error(&format!("null pointer: {what}"));
    FpmcStatus::NullPointer
}

unsafe fn path_arg(ptr: *const c_char) -> Result<std::path::PathBuf, FpmcStatus> {
    if ptr.is_null() {
        return Err(null_fail("path"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s).to_path_buf()),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(FpmcStatus::ValidationError)
        }
    }
}

/// Opaque dataset handle.
pub struct FpmcDataset {
    inner: Arc<Dataset>,
}

/// Opaque collection-model handle.
pub struct FpmcModelHandle {
    inner: FpmcModel,
}

/// Opaque Wiener-model handle (paired with the schedule it will be
/// evaluated against).
pub struct FpmcWienerHandle {
    inner: WienerModel,
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn fpmc_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Copy the last error message (UTF-8, NUL-terminated) into `buf`. Returns
/// the number of bytes written, excluding the terminator; 0 when no error
/// has been recorded or `buf_len` is 0.
///
/// # Safety
/// `buf` must point to `buf_len` writable bytes (or be null, a no-op).
#[no_mangle]
pub unsafe extern "C" fn fpmc_last_error_message(buf: *mut c_char, buf_len: usize) -> usize {
    if buf.is_null() || buf_len == 0 {
        return 0;
    }
    LAST_ERROR.with(|slot| {
        let borrow = slot.borrow();
        let Some(msg) = borrow.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes();
        let n = bytes.len().min(buf_len - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
        *buf.add(n) = 0;
        n
    })
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Load a dataset from a tensor container file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fpmc_dataset_load(
    path: *const c_char,
    out: *mut *mut FpmcDataset,
) -> FpmcStatus {
    if out.is_null() {
        return null_fail("out");
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    match load_dataset_auto(&path) {
        Ok(ds) => {
            *out = Box::into_raw(Box::new(FpmcDataset { inner: ds.shared() }));
            FpmcStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Number of images in the dataset.
///
/// # Safety
/// `handle` must come from `fpmc_dataset_load` and not be freed.
#[no_mangle]
pub unsafe extern "C" fn fpmc_dataset_len(handle: *const FpmcDataset) -> usize {
    if handle.is_null() {
        return 0;
    }
    (*handle).inner.len()
}

/// Flat dimension (width * height * channels) of each image.
///
/// # Safety
/// `handle` must come from `fpmc_dataset_load` and not be freed.
#[no_mangle]
pub unsafe extern "C" fn fpmc_dataset_dim(handle: *const FpmcDataset) -> usize {
    if handle.is_null() {
        return 0;
    }
    (*handle).inner.dim()
}

/// Destroy a dataset handle (null is a no-op).
///
/// # Safety
/// `handle` must come from `fpmc_dataset_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fpmc_dataset_free(handle: *mut FpmcDataset) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

// ---------------------------------------------------------------------------
// Collection models
// ---------------------------------------------------------------------------

/// Load a persisted collection model directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fpmc_model_load(
    dir: *const c_char,
    out: *mut *mut FpmcModelHandle,
) -> FpmcStatus {
    if out.is_null() {
        return null_fail("out");
    }
    let dir = match path_arg(dir) {
        Ok(p) => p,
        Err(code) => return code,
    };
    match FpmcModel::load(&dir) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(FpmcModelHandle { inner }));
            FpmcStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Number of schedule steps.
///
/// # Safety
/// `handle` must come from `fpmc_model_load` and not be freed.
#[no_mangle]
pub unsafe extern "C" fn fpmc_model_num_steps(handle: *const FpmcModelHandle) -> usize {
    if handle.is_null() {
        return 0;
    }
    (*handle).inner.num_steps()
}

/// Flat dimension of the model's images.
///
/// # Safety
/// `handle` must come from `fpmc_model_load` and not be freed.
#[no_mangle]
pub unsafe extern "C" fn fpmc_model_dim(handle: *const FpmcModelHandle) -> usize {
    if handle.is_null() {
        return 0;
    }
    (*handle).inner.geometry().dim()
}

/// Grid time of one schedule step; NaN for an invalid index.
///
/// # Safety
/// `handle` must come from `fpmc_model_load` and not be freed.
#[no_mangle]
pub unsafe extern "C" fn fpmc_model_step_t(handle: *const FpmcModelHandle, step: usize) -> f64 {
    if handle.is_null() {
        return f64::NAN;
    }
    (*handle)
        .inner
        .schedule()
        .t_grid()
        .get(step)
        .copied()
        .unwrap_or(f64::NAN)
}

/// Denoise `batch` rows of length `dim` at a schedule step. `zs` and `out`
/// are row-major `batch * dim` buffers; `out` is fully overwritten.
///
/// # Safety
/// `handle` must be a live model handle; `zs` and `out` must point to
/// `batch * dim` readable/writable f64 values.
#[no_mangle]
pub unsafe extern "C" fn fpmc_model_denoise(
    handle: *const FpmcModelHandle,
    step: usize,
    zs: *const f64,
    batch: usize,
    dim: usize,
    out: *mut f64,
) -> FpmcStatus {
    if handle.is_null() {
        return null_fail("model");
    }
    if zs.is_null() || out.is_null() {
        return null_fail("buffer");
    }
    let model = &(*handle).inner;
    if dim != model.geometry().dim() {
        set_error(&format!(
            "dim {dim} does not match model dimension {}",
            model.geometry().dim()
        ));
        return FpmcStatus::ValidationError;
    }
    let input = std::slice::from_raw_parts(zs, batch * dim);
    let view = match ArrayView2::from_shape((batch, dim), input) {
        Ok(v) => v,
        Err(e) => {
            set_error(&e.to_string());
            return FpmcStatus::ValidationError;
        }
    };
    match model.denoise_at_step(view, step) {
        Ok(result) => {
            let dst = std::slice::from_raw_parts_mut(out, batch * dim);
            for (d, &s) in dst.iter_mut().zip(result.iter()) {
                *d = s;
            }
            FpmcStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Draw `batch` samples by deterministic PF-ODE integration over the
/// model's own schedule, writing a row-major `batch * dim` buffer.
///
/// # Safety
/// `handle` must be a live model handle; `out` must hold `batch * dim`
/// writable f64 values.
#[no_mangle]
pub unsafe extern "C" fn fpmc_model_sample(
    handle: *const FpmcModelHandle,
    batch: usize,
    seed: u64,
    out: *mut f64,
) -> FpmcStatus {
    if handle.is_null() {
        return null_fail("model");
    }
    if out.is_null() {
        return null_fail("out");
    }
    let model = &(*handle).inner;
    let config = SamplerConfig {
        schedule: model.schedule().clone(),
        seed,
        batch,
    };
    let prior = sample_prior(&config, model.geometry().dim());
    match heun_sample_from(&config, model, prior, false) {
        Ok(result) => {
            let dim = model.geometry().dim();
            let dst = std::slice::from_raw_parts_mut(out, batch * dim);
            for (d, &s) in dst.iter_mut().zip(result.samples.iter()) {
                *d = s;
            }
            FpmcStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Destroy a model handle (null is a no-op).
///
/// # Safety
/// `handle` must come from `fpmc_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fpmc_model_free(handle: *mut FpmcModelHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

// ---------------------------------------------------------------------------
// Wiener models
// ---------------------------------------------------------------------------

/// Fit a Wiener model (mean plus covariance eigendecomposition) on a dataset.
///
/// # Safety
/// `dataset` must be a live dataset handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fpmc_wiener_fit(
    dataset: *const FpmcDataset,
    out: *mut *mut FpmcWienerHandle,
) -> FpmcStatus {
    if dataset.is_null() {
        return null_fail("dataset");
    }
    if out.is_null() {
        return null_fail("out");
    }
    match fit_wiener(&(*dataset).inner) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(FpmcWienerHandle { inner }));
            FpmcStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Wiener-denoise `batch` rows at time `t` (alpha = 1, sigma = t).
///
/// # Safety
/// `handle` must be a live Wiener handle; `zs` and `out` must point to
/// `batch * dim` readable/writable f64 values.
#[no_mangle]
pub unsafe extern "C" fn fpmc_wiener_denoise(
    handle: *const FpmcWienerHandle,
    t: f64,
    zs: *const f64,
    batch: usize,
    dim: usize,
    out: *mut f64,
) -> FpmcStatus {
    if handle.is_null() {
        return null_fail("wiener");
    }
    if zs.is_null() || out.is_null() {
        return null_fail("buffer");
    }
    let model = &(*handle).inner;
    if dim != model.dim() {
        set_error(&format!("dim {dim} does not match model dimension {}", model.dim()));
        return FpmcStatus::ValidationError;
    }
    let sched = match DiffusionSchedule::new(vec![t]) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let input = std::slice::from_raw_parts(zs, batch * dim);
    let view = match ArrayView2::from_shape((batch, dim), input) {
        Ok(v) => v,
        Err(e) => {
            set_error(&e.to_string());
            return FpmcStatus::ValidationError;
        }
    };
    match wiener_denoise_batch(view, t, model, &sched) {
        Ok(result) => {
            let dst = std::slice::from_raw_parts_mut(out, batch * dim);
            for (d, &s) in dst.iter_mut().zip(result.iter()) {
                *d = s;
            }
            FpmcStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Destroy a Wiener handle (null is a no-op).
///
/// # Safety
/// `handle` must come from `fpmc_wiener_fit` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fpmc_wiener_free(handle: *mut FpmcWienerHandle) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

// ---------------------------------------------------------------------------
// Free functions
// ---------------------------------------------------------------------------

/// Fill `out` (length `num_steps`) with the rho-interpolated descending
/// time grid.
///
/// # Safety
/// `out` must hold `num_steps` writable f64 values.
#[no_mangle]
pub unsafe extern "C" fn fpmc_edm_time_grid(
    num_steps: usize,
    t_min: f64,
    t_max: f64,
    rho: f64,
    out: *mut f64,
) -> FpmcStatus {
    if out.is_null() {
        return null_fail("out");
    }
    match edm_time_grid(num_steps, t_min, t_max, rho) {
        Ok(grid) => {
            let dst = std::slice::from_raw_parts_mut(out, num_steps);
            dst.copy_from_slice(&grid);
            FpmcStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Empirical posterior mean over a dataset for `batch` rows at time `t`.
///
/// # Safety
/// `dataset` must be a live dataset handle; `zs` and `out` must point to
/// `batch * dim` readable/writable f64 values.
#[no_mangle]
pub unsafe extern "C" fn fpmc_optimal_denoise(
    dataset: *const FpmcDataset,
    t: f64,
    zs: *const f64,
    batch: usize,
    dim: usize,
    out: *mut f64,
) -> FpmcStatus {
    if dataset.is_null() {
        return null_fail("dataset");
    }
    if zs.is_null() || out.is_null() {
        return null_fail("buffer");
    }
    let data = &(*dataset).inner;
    if dim != data.dim() {
        set_error(&format!("dim {dim} does not match dataset dimension {}", data.dim()));
        return FpmcStatus::ValidationError;
    }
    let sched = match DiffusionSchedule::new(vec![t]) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let input = std::slice::from_raw_parts(zs, batch * dim);
    let view = match ArrayView2::from_shape((batch, dim), input) {
        Ok(v) => v,
        Err(e) => {
            set_error(&e.to_string());
            return FpmcStatus::ValidationError;
        }
    };
    match fpmc::classical::optimal_denoiser_batch(view, t, data, &sched) {
        Ok(result) => {
            let dst = std::slice::from_raw_parts_mut(out, batch * dim);
            for (d, &s) in dst.iter_mut().zip(result.iter()) {
                *d = s;
            }
            FpmcStatus::Ok
        }
        Err(e) => fail(e),
    }
}
