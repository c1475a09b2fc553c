//! C ABI for the `dcf` library.
//!
//! Models are opaque `DcfModel` handles created by `dcf_fit` or
//! `dcf_model_load` and released with `dcf_model_free`. Every function
//! returns a `DcfStatus`; on failure `dcf_last_error_message` describes the
//! most recent error on the calling thread. Panics are caught at the
//! boundary and reported as `DCF_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use dcf::cli::persist::{load_model, save_model};
use dcf::features::FeatureKind;
use dcf::fit::{fit_dcf, FitConfig, Theta2Mode};
use dcf::model::{Body, DcModel, Variant};
use dcf::partition::Dataset;
use dcf::DcfError;

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    EmptyDataset = 4,
    DataError = 5,
    IoError = 6,
    FormatError = 7,
    SolverError = 8,
    Panic = 9,
}

/// Opaque fitted model.
pub struct DcfModel {
    inner: DcModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &DcfError) -> DcfStatus {
    match err {
        DcfError::InvalidArgument(_) | DcfError::InvalidDimension(_) | DcfError::WrongVariant { .. } => {
            DcfStatus::InvalidArgument
        }
        DcfError::DimensionMismatch { .. } | DcfError::LabelOutOfRange { .. } => DcfStatus::DimensionMismatch,
        DcfError::EmptyDataset => DcfStatus::EmptyDataset,
        DcfError::Parse { .. } | DcfError::Data(_) | DcfError::UndefinedFvu => DcfStatus::DataError,
        DcfError::FileNotFound(_) | DcfError::Io(_) => DcfStatus::IoError,
        DcfError::Format(_) => DcfStatus::FormatError,
        DcfError::SolverAbort(_) | DcfError::ConstraintViolation(_) => DcfStatus::SolverError,
    }
}

struct Failure(DcfStatus, String);

impl From<DcfError> for Failure {
    fn from(e: DcfError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DcfStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any error message and converts panics to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DcfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DcfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DcfStatus::Panic
        }
    }
}

/// Reads an optional C string; null means "use the default".
unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Failure(DcfStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    opt_str(p, "path")?.map(PathBuf::from).ok_or_else(|| null("path"))
}

unsafe fn model_ref<'a>(model: *const DcfModel) -> Result<&'a DcModel, Failure> {
    model.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn checked_len(n: usize, d: usize) -> Result<usize, Failure> {
    n.checked_mul(d).ok_or_else(|| Failure(DcfStatus::InvalidArgument, "n * d overflows".into()))
}

fn into_handle(model: DcModel, out: *mut *mut DcfModel) {
    // SAFETY: callers check `out` for null before reaching here.
    unsafe { *out = Box::into_raw(Box::new(DcfModel { inner: model })) };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dcf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn dcf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Fits a model on `n` row-major rows of `d` covariates `x` and responses `y`.
///
/// `variant`, `kind` and `theta2` take the CLI names (for example
/// `"symmetric"`, `"linf"`, `"strong"`); null selects `symmetric`, `linf`
/// and `strong`. On success `*out` receives a handle owned by the caller.
///
/// # Safety
/// `x` must point to `n * d` doubles, `y` to `n` doubles, and string
/// arguments must be null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dcf_fit(
    x: *const f64,
    y: *const f64,
    n: usize,
    d: usize,
    variant: *const c_char,
    kind: *const c_char,
    theta2: *const c_char,
    seed: u64,
    out: *mut *mut DcfModel,
) -> DcfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let xs = slice(x, checked_len(n, d)?, "x")?;
        let ys = slice(y, n, "y")?;
        let variant: Variant = opt_str(variant, "variant")?.unwrap_or("symmetric").parse()?;
        let kind: FeatureKind = opt_str(kind, "kind")?.unwrap_or("linf").parse()?;
        let theta2: Theta2Mode = opt_str(theta2, "theta2")?.unwrap_or("strong").parse()?;
        variant.check_kind(kind)?;
        let data = Dataset::new(xs.to_vec(), ys.to_vec(), d)?;
        let cfg = FitConfig { theta2_mode: theta2, seed, ..FitConfig::new(variant, kind) };
        let res = fit_dcf(&data, &cfg)?;
        if let Some(abort) = res.initial_report.abort.as_ref() {
            return Err(DcfError::SolverAbort(abort.clone()).into());
        }
        into_handle(res.final_model, out);
        Ok(())
    })
}

/// Loads a model saved by `dcf_model_save` or the `dcf fit` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcf_model_load(path: *const c_char, out: *mut *mut DcfModel) -> DcfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let model = load_model(&path_arg(path)?)?;
        into_handle(model, out);
        Ok(())
    })
}

/// Writes `model` as JSON to `path`.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dcf_model_save(model: *const DcfModel, path: *const c_char) -> DcfStatus {
    guard(|| {
        save_model(model_ref(model)?, &path_arg(path)?)?;
        Ok(())
    })
}

/// Evaluates `model` on `n` row-major rows of `d` covariates, writing `n` values to `out`.
///
/// # Safety
/// `x` must point to `n * d` doubles and `out` to room for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn dcf_model_predict(
    model: *const DcfModel,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> DcfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if d != m.d() {
            return Err(DcfError::DimensionMismatch { expected: m.d(), got: d }.into());
        }
        let xs = slice(x, checked_len(n, d)?, "x")?;
        if n > 0 && out.is_null() {
            return Err(null("out"));
        }
        for (i, row) in xs.chunks_exact(d).take(n).enumerate() {
            *out.add(i) = m.eval(row)?;
        }
        Ok(())
    })
}

/// Covariate dimension of `model`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcf_model_dim(model: *const DcfModel, out: *mut usize) -> DcfStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.d();
        Ok(())
    })
}

/// Piece counts: `pieces[0]` for the first (or only) component and
/// `pieces[1]` for the subtracted component, zero when absent.
///
/// # Safety
/// `model` must be a live handle and `pieces` must have room for two values.
#[no_mangle]
pub unsafe extern "C" fn dcf_model_num_pieces(model: *const DcfModel, pieces: *mut usize) -> DcfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if pieces.is_null() {
            return Err(null("pieces"));
        }
        let (a, b) = match m.body() {
            Body::Max(c) => (c.k(), 0),
            Body::Difference { pos, neg } => (pos.k(), neg.k()),
            Body::MaxMin(mm) => (mm.k(), 0),
        };
        *pieces = a;
        *pieces.add(1) = b;
        Ok(())
    })
}

/// Total parameter count of `model`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcf_model_num_params(model: *const DcfModel, out: *mut usize) -> DcfStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.num_params();
        Ok(())
    })
}

/// Largest slope norm over the pieces of `model`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dcf_model_lip_stat(model: *const DcfModel, out: *mut f64) -> DcfStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.lip_stat();
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcf_model_free(model: *mut DcfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
