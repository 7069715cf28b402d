//! C ABI over the estimators.
//!
//! Every fallible function returns an `int32_t` status (`DRML_OK` on
//! success) and writes its result through an out-pointer. On failure the
//! message is available from `drml_last_error` on the same thread until the
//! next call. Datasets are opaque handles released with `drml_dataset_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use drml_iv::data::{load_dataset, IvDataset, SchemaConfig};
use drml_iv::error::DrmlError;
use drml_iv::late::{
    estimate_late_drml_with_pseudo, estimate_late_tsls, estimate_late_unadjusted, LateResult,
};
use drml_iv::nuisance::{make_folds, NuisanceSpecs};
use drml_iv::profiling::strata_shares;
use drml_iv::sensitivity;
use ndarray::Array2;

pub const DRML_OK: i32 = 0;
pub const DRML_NULL_POINTER: i32 = 1;
pub const DRML_INPUT_ERROR: i32 = 2;
pub const DRML_ESTIMATION_ERROR: i32 = 3;
pub const DRML_INVALID_ARGUMENT: i32 = 4;
pub const DRML_PANIC: i32 = 5;

pub const DRML_LEARNER_PARAMETRIC: i32 = 0;
pub const DRML_LEARNER_ENSEMBLE: i32 = 1;

pub const DRML_METHOD_DRML: i32 = 0;
pub const DRML_METHOD_TSLS: i32 = 1;
pub const DRML_METHOD_UNADJUSTED: i32 = 2;

/// Opaque dataset handle.
pub struct DrmlDataset {
    inner: IvDataset,
}

/// LATE estimate. `gamma_hat` and `delta_hat` are NaN for TSLS.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DrmlLateResult {
    pub method: i32,
    pub chi_hat: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub gamma_hat: f64,
    pub delta_hat: f64,
    pub n: usize,
}

/// Principal-strata shares with standard errors.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DrmlStrataShares {
    pub complier: f64,
    pub complier_se: f64,
    pub always_taker: f64,
    pub always_taker_se: f64,
    pub never_taker: f64,
    pub never_taker_se: f64,
}

/// Cross-fitting settings for the DRML entry points.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrmlOptions {
    pub folds: u32,
    pub seed: u64,
    /// `DRML_LEARNER_PARAMETRIC` or `DRML_LEARNER_ENSEMBLE`.
    pub learner: i32,
    pub epsilon: f64,
    pub alpha: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &DrmlError) -> i32 {
    if err.is_input_error() {
        DRML_INPUT_ERROR
    } else if matches!(err, DrmlError::InvalidArgument(_) | DrmlError::Dimension(_)) {
        DRML_INVALID_ARGUMENT
    } else {
        DRML_ESTIMATION_ERROR
    }
}

/// Runs `f`, mapping errors and panics onto status codes.
fn guard<F: FnOnce() -> Result<(), (i32, String)>>(f: F) -> i32 {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DRML_OK,
        Ok(Err((code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            DRML_PANIC
        }
    }
}

fn lift(e: DrmlError) -> (i32, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (i32, String) {
    (DRML_NULL_POINTER, format!("{what} is null"))
}

fn late_to_c(r: &LateResult, method: i32) -> DrmlLateResult {
    DrmlLateResult {
        method,
        chi_hat: r.chi_hat,
        se: r.se,
        ci_lo: r.ci_lo,
        ci_hi: r.ci_hi,
        gamma_hat: r.gamma_hat.unwrap_or(f64::NAN),
        delta_hat: r.delta_hat.unwrap_or(f64::NAN),
        n: r.n,
    }
}

fn specs_for(learner: i32) -> Result<NuisanceSpecs, (i32, String)> {
    match learner {
        DRML_LEARNER_PARAMETRIC => Ok(NuisanceSpecs::parametric()),
        DRML_LEARNER_ENSEMBLE => Ok(NuisanceSpecs::ensemble()),
        other => Err((DRML_INVALID_ARGUMENT, format!("unknown learner code {other}"))),
    }
}

/// Default options: 5 folds, seed 0, ensemble learner, epsilon 0.01, alpha 0.05.
#[no_mangle]
pub extern "C" fn drml_options_default() -> DrmlOptions {
    DrmlOptions {
        folds: 5,
        seed: 0,
        learner: DRML_LEARNER_ENSEMBLE,
        epsilon: 0.01,
        alpha: 0.05,
    }
}

/// Builds a dataset from column arrays; `x` is row-major `n * p` and may be
/// null when `p == 0`. All arrays are copied.
///
/// # Safety
/// `y`, `a`, `z` must point to `n` doubles and `x` to `n * p` doubles;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drml_dataset_from_arrays(
    y: *const f64,
    a: *const f64,
    z: *const f64,
    x: *const f64,
    n: usize,
    p: usize,
    out: *mut *mut DrmlDataset,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if y.is_null() || a.is_null() || z.is_null() {
            return Err(null("y, a or z"));
        }
        if p > 0 && x.is_null() {
            return Err(null("x"));
        }
        let col = |ptr: *const f64| std::slice::from_raw_parts(ptr, n).to_vec();
        let xs = if p == 0 { vec![] } else { std::slice::from_raw_parts(x, n * p).to_vec() };
        let xm = Array2::from_shape_vec((n, p), xs).map_err(|e| (DRML_INVALID_ARGUMENT, e.to_string()))?;
        let names = (0..p).map(|j| format!("x{}", j + 1)).collect();
        let ds = IvDataset::new(col(y), col(a), col(z), xm, names).map_err(lift)?;
        *out = Box::into_raw(Box::new(DrmlDataset { inner: ds }));
        Ok(())
    })
}

/// Loads a dataset described by a schema TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drml_dataset_from_config(path: *const c_char, out: *mut *mut DrmlDataset) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (DRML_INVALID_ARGUMENT, "path is not UTF-8".to_string()))?;
        let schema = SchemaConfig::from_toml_file(Path::new(p)).map_err(lift)?;
        let ds = load_dataset(&schema).map_err(lift)?;
        *out = Box::into_raw(Box::new(DrmlDataset { inner: ds }));
        Ok(())
    })
}

/// Releases a dataset; null is ignored.
///
/// # Safety
/// `ds` must come from a `drml_dataset_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn drml_dataset_free(ds: *mut DrmlDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of rows, or 0 for null.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn drml_dataset_rows(ds: *const DrmlDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n())
}

/// Number of covariate columns after categorical expansion, or 0 for null.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn drml_dataset_covariates(ds: *const DrmlDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.p())
}

/// Cross-fitted DRML estimate.
///
/// # Safety
/// `ds` must be a live handle, `opts` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn drml_estimate_drml(
    ds: *const DrmlDataset,
    opts: *const DrmlOptions,
    out: *mut DrmlLateResult,
) -> i32 {
    guard(|| {
        let (d, o, out) = match (ds.as_ref(), opts.as_ref(), out.as_mut()) {
            (Some(d), Some(o), Some(out)) => (d, o, out),
            _ => return Err(null("dataset, options or result")),
        };
        let plan = make_folds(d.inner.n(), o.folds as usize, &d.inner.z, o.seed).map_err(lift)?;
        let (r, _) = estimate_late_drml_with_pseudo(&d.inner, &plan, &specs_for(o.learner)?, o.epsilon, o.alpha)
            .map_err(lift)?;
        *out = late_to_c(&r, DRML_METHOD_DRML);
        Ok(())
    })
}

/// Two-stage least squares with linear covariate main effects.
///
/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drml_estimate_tsls(ds: *const DrmlDataset, alpha: f64, out: *mut DrmlLateResult) -> i32 {
    guard(|| {
        let (d, out) = match (ds.as_ref(), out.as_mut()) {
            (Some(d), Some(out)) => (d, out),
            _ => return Err(null("dataset or result")),
        };
        *out = late_to_c(&estimate_late_tsls(&d.inner, alpha).map_err(lift)?, DRML_METHOD_TSLS);
        Ok(())
    })
}

/// Unadjusted Wald ratio.
///
/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drml_estimate_unadjusted(
    ds: *const DrmlDataset,
    alpha: f64,
    out: *mut DrmlLateResult,
) -> i32 {
    guard(|| {
        let (d, out) = match (ds.as_ref(), out.as_mut()) {
            (Some(d), Some(out)) => (d, out),
            _ => return Err(null("dataset or result")),
        };
        *out = late_to_c(&estimate_late_unadjusted(&d.inner, alpha).map_err(lift)?, DRML_METHOD_UNADJUSTED);
        Ok(())
    })
}

/// Complier, always-taker and never-taker shares from cross-fitted nuisances.
///
/// # Safety
/// `ds` must be a live handle, `opts` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn drml_strata_shares(
    ds: *const DrmlDataset,
    opts: *const DrmlOptions,
    out: *mut DrmlStrataShares,
) -> i32 {
    guard(|| {
        let (d, o, out) = match (ds.as_ref(), opts.as_ref(), out.as_mut()) {
            (Some(d), Some(o), Some(out)) => (d, o, out),
            _ => return Err(null("dataset, options or result")),
        };
        let plan = make_folds(d.inner.n(), o.folds as usize, &d.inner.z, o.seed).map_err(lift)?;
        let (_, pseudo) = estimate_late_drml_with_pseudo(&d.inner, &plan, &specs_for(o.learner)?, o.epsilon, o.alpha)
            .map_err(lift)?;
        let s = strata_shares(&pseudo);
        *out = DrmlStrataShares {
            complier: s.complier.estimate,
            complier_se: s.complier.se,
            always_taker: s.always_taker.estimate,
            always_taker_se: s.always_taker.se,
            never_taker: s.never_taker.estimate,
            never_taker_se: s.never_taker.se,
        };
        Ok(())
    })
}

/// Sensitivity mapping `chi + delta1 * delta2 / delta`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drml_xi(chi_hat: f64, delta_hat: f64, delta1: f64, delta2: f64, out: *mut f64) -> i32 {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = sensitivity::xi(chi_hat, delta_hat, delta1, delta2).map_err(lift)?;
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn drml_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn drml_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
