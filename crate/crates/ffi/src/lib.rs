//! C ABI for loading checkpoints and scoring windows.
//!
//! Every function is callable from C via the generated `include/tsan.h`.
//! Models travel as opaque `TsanModel` pointers owned by the library;
//! failures come back as a [`TsanStatus`] code, with a human-readable
//! description available from [`tsan_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::Path;
use std::sync::OnceLock;

use libc::{c_char, c_double, c_float, size_t};

use tsan_core::autodiff::Tensor;
use tsan_core::model::{threshold_decision, Model};
use tsan_core::TsanError;

/// Outcome of a C API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsanStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// File could not be read or written.
    Io = 3,
    /// File exists but is not a valid checkpoint.
    Format = 4,
    /// Input dimensions disagree with the model.
    Shape = 5,
    /// Invalid configuration or misuse of the API.
    Invalid = 6,
}

/// Opaque handle to a loaded detection model.
pub struct TsanModel {
    inner: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("NULs stripped");
    });
}

fn fail(err: &TsanError) -> TsanStatus {
    set_last_error(&err.to_string());
    match err {
        TsanError::Io(_) => TsanStatus::Io,
        TsanError::Format(_) | TsanError::Parse { .. } => TsanStatus::Format,
        TsanError::Shape(_) => TsanStatus::Shape,
        TsanError::Config(_) | TsanError::Contract(_) => TsanStatus::Invalid,
    }
}

fn fail_null(what: &str) -> TsanStatus {
    set_last_error(&format!("{what} must not be null"));
    TsanStatus::NullArgument
}

/// Build version of the library as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tsan_version() -> *const c_char {
    static VERSION: OnceLock<CString> = OnceLock::new();
    VERSION
        .get_or_init(|| CString::new(tsan_core::cli::version()).expect("version has no NUL"))
        .as_ptr()
}

/// Description of the most recent failure on this thread; the empty
/// string when there was none. The pointer stays valid until the next
/// call into this library from the same thread.
#[no_mangle]
pub extern "C" fn tsan_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Load a checkpoint from `path` into `*out_model`. On success the
/// caller owns the handle and must release it with [`tsan_model_free`].
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out_model` to a
/// writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn tsan_model_load(
    path: *const c_char,
    out_model: *mut *mut TsanModel,
) -> TsanStatus {
    if out_model.is_null() {
        return fail_null("out_model");
    }
    *out_model = std::ptr::null_mut();
    if path.is_null() {
        return fail_null("path");
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_last_error("path is not valid UTF-8");
            return TsanStatus::InvalidUtf8;
        }
    };
    match Model::<f32>::load(Path::new(path)) {
        Ok((inner, _schema)) => {
            *out_model = Box::into_raw(Box::new(TsanModel { inner }));
            set_last_error("");
            TsanStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Release a handle obtained from [`tsan_model_load`]. A null pointer
/// is a no-op.
///
/// # Safety
/// `model` must be null or a pointer returned by [`tsan_model_load`]
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn tsan_model_free(model: *mut TsanModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Window length `w` the model expects; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tsan_model_window_len(model: *const TsanModel) -> size_t {
    model.as_ref().map(|m| m.inner.config.w).unwrap_or(0)
}

/// Feature width `f` the model expects; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tsan_model_feature_width(model: *const TsanModel) -> size_t {
    model.as_ref().map(|m| m.inner.config.f).unwrap_or(0)
}

/// Decision threshold stored in the checkpoint; NaN for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tsan_model_threshold(model: *const TsanModel) -> c_double {
    model
        .as_ref()
        .map(|m| m.inner.config.threshold)
        .unwrap_or(f64::NAN)
}

/// Score `n` windows. `x_temporal` holds `n * w * f` floats and
/// `x_spatial` holds `n * f` floats, both row-major; `scores` receives
/// `n` DoS probabilities. `decisions` may be null, otherwise it
/// receives `n` 0/1 verdicts at the model's stored threshold.
///
/// # Safety
/// All non-null pointers must reference buffers of the sizes above.
#[no_mangle]
pub unsafe extern "C" fn tsan_model_predict(
    model: *const TsanModel,
    x_temporal: *const c_float,
    x_spatial: *const c_float,
    n: size_t,
    scores: *mut c_float,
    decisions: *mut u8,
) -> TsanStatus {
    let Some(model) = model.as_ref() else {
        return fail_null("model");
    };
    if n == 0 {
        set_last_error("");
        return TsanStatus::Ok;
    }
    if x_temporal.is_null() {
        return fail_null("x_temporal");
    }
    if x_spatial.is_null() {
        return fail_null("x_spatial");
    }
    if scores.is_null() {
        return fail_null("scores");
    }
    let (w, f) = (model.inner.config.w, model.inner.config.f);
    let xt = std::slice::from_raw_parts(x_temporal, n * w * f);
    let xs = std::slice::from_raw_parts(x_spatial, n * f);
    let run = || -> tsan_core::Result<Vec<f32>> {
        let xt = Tensor::new(vec![n, w, f], xt.to_vec())?;
        let xs = Tensor::new(vec![n, f], xs.to_vec())?;
        Ok(model.inner.predict(&xt, &xs)?.y_main)
    };
    match run() {
        Ok(y) => {
            let out = std::slice::from_raw_parts_mut(scores, n);
            out.copy_from_slice(&y);
            if !decisions.is_null() {
                let out = std::slice::from_raw_parts_mut(decisions, n);
                for (d, &s) in out.iter_mut().zip(&y) {
                    *d = threshold_decision(s as f64, model.inner.config.threshold);
                }
            }
            set_last_error("");
            TsanStatus::Ok
        }
        Err(e) => fail(&e),
    }
}
