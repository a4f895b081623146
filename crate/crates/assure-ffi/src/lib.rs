//! C ABI over the welfare-estimation library.
//!
//! Conventions:
//! - Handles are opaque heap pointers created by `*_new`/`*_from_*` and
//!   released by the matching `*_free`; freeing null is a no-op.
//! - Every fallible call returns an `i32` status: 0 for success, otherwise a
//!   stable code mirroring the library's error taxonomy plus FFI-specific
//!   codes for null pointers, invalid UTF-8, and caught panics.
//! - After a non-zero status, `assure_last_error_message` returns a
//!   NUL-terminated description owned by a thread-local; the pointer stays
//!   valid until the next failing call on the same thread.
//! - All panics are caught at the boundary; nothing unwinds into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use assure::classes::{Context, DecisionFamily};
use assure::error::Error;
use assure::model::{Bandwidth, Dataset, Mode, Unit};
use assure::optimize::{grid_argmax, multistart_argmax, Method};

pub const ASSURE_OK: i32 = 0;
pub const ASSURE_ERR_IO: i32 = 1;
pub const ASSURE_ERR_CSV: i32 = 2;
pub const ASSURE_ERR_DOMAIN: i32 = 3;
pub const ASSURE_ERR_PRECONDITION: i32 = 4;
pub const ASSURE_ERR_UNSUPPORTED: i32 = 5;
pub const ASSURE_ERR_CONFIG: i32 = 6;
pub const ASSURE_ERR_NULL_POINTER: i32 = 7;
pub const ASSURE_ERR_UTF8: i32 = 8;
pub const ASSURE_ERR_PANIC: i32 = 9;

pub const ASSURE_MODE_GAUSSIAN: i32 = 0;
pub const ASSURE_MODE_POISSON: i32 = 1;

pub const ASSURE_METHOD_ASSURE: i32 = 0;
pub const ASSURE_METHOD_CB: i32 = 1;
pub const ASSURE_METHOD_POISSON: i32 = 2;

/// Opaque dataset handle.
pub struct AssureDataset(Dataset);
/// Opaque decision-family handle.
pub struct AssureFamily(DecisionFamily);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let owned = CString::new(msg.replace('\0', " ")).expect("NUL stripped");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = owned);
}

fn code_of(e: &Error) -> i32 {
    match e.code() {
        "io" => ASSURE_ERR_IO,
        "csv" => ASSURE_ERR_CSV,
        "domain" => ASSURE_ERR_DOMAIN,
        "precondition" => ASSURE_ERR_PRECONDITION,
        "unsupported" => ASSURE_ERR_UNSUPPORTED,
        _ => ASSURE_ERR_CONFIG,
    }
}

fn fail(e: Error) -> i32 {
    set_error(&e.to_string());
    code_of(&e)
}

fn fail_null(what: &str) -> i32 {
    set_error(&format!("{what} must not be null"));
    ASSURE_ERR_NULL_POINTER
}

/// Runs a closure, translating panics into a status code so no unwind
/// crosses the ABI.
fn guarded(body: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in library call".into());
            set_error(&msg);
            ASSURE_ERR_PANIC
        }
    }
}

fn mode_of(mode: i32) -> Result<Mode, Error> {
    match mode {
        ASSURE_MODE_GAUSSIAN => Ok(Mode::Gaussian),
        ASSURE_MODE_POISSON => Ok(Mode::Poisson),
        other => Err(Error::config(format!(
            "mode must be 0 (gaussian) or 1 (poisson), got {other}"
        ))),
    }
}

/// `smoothing` is the bandwidth (assure) or coupling scale (cb); pass NaN
/// for each estimator's data-driven default.
fn method_of(method: i32, smoothing: f64) -> Result<Method, Error> {
    match method {
        ASSURE_METHOD_ASSURE => {
            let h = if smoothing.is_nan() {
                None
            } else {
                Some(Bandwidth::new(smoothing)?)
            };
            Ok(Method::Assure { h })
        }
        ASSURE_METHOD_CB => {
            let eps = if smoothing.is_nan() { None } else { Some(smoothing) };
            Ok(Method::Cb { eps })
        }
        ASSURE_METHOD_POISSON => {
            if !smoothing.is_nan() {
                return Err(Error::config(
                    "the poisson estimator takes no smoothing parameter; pass NaN",
                ));
            }
            Ok(Method::Poisson)
        }
        other => Err(Error::config(format!(
            "method must be 0 (assure), 1 (cb), or 2 (poisson), got {other}"
        ))),
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, i32> {
    if ptr.is_null() {
        return Err(fail_null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        ASSURE_ERR_UTF8
    })
}

/// Message describing the most recent failure on this thread. Empty until a
/// call fails; the pointer stays valid until the next failing call here.
#[no_mangle]
pub extern "C" fn assure_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds a dataset from parallel arrays of length `n`. `covariates` is
/// either null (with `covariate_dim` 0) or a row-major `n * covariate_dim`
/// block. On success writes a new handle to `out`.
///
/// # Safety
/// `y`, `sigma`, `cost` must point to `n` readable doubles; `covariates`,
/// when non-null, to `n * covariate_dim` of them; `out` must be a valid
/// destination for one pointer.
#[no_mangle]
pub unsafe extern "C" fn assure_dataset_new(
    y: *const f64,
    sigma: *const f64,
    cost: *const f64,
    covariates: *const f64,
    covariate_dim: usize,
    n: usize,
    mode: i32,
    out: *mut *mut AssureDataset,
) -> i32 {
    if out.is_null() {
        return fail_null("out");
    }
    if y.is_null() || sigma.is_null() || cost.is_null() {
        return fail_null("y/sigma/cost arrays");
    }
    if covariates.is_null() && covariate_dim != 0 {
        return fail_null("covariates (with covariate_dim > 0)");
    }
    let y = std::slice::from_raw_parts(y, n);
    let sigma = std::slice::from_raw_parts(sigma, n);
    let cost = std::slice::from_raw_parts(cost, n);
    let cov = if covariate_dim == 0 {
        &[][..]
    } else {
        std::slice::from_raw_parts(covariates, n * covariate_dim)
    };
    guarded(|| {
        let units: Vec<Unit> = (0..n)
            .map(|i| {
                let x = cov[i * covariate_dim..(i + 1) * covariate_dim].to_vec();
                Unit::new(y[i], sigma[i], cost[i], x)
            })
            .collect();
        let mode = match mode_of(mode) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        match Dataset::from_units(units, mode) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(AssureDataset(d)));
                ASSURE_OK
            }
            Err(e) => {
                *out = std::ptr::null_mut();
                fail(e)
            }
        }
    })
}

/// Loads a dataset from a CSV file with columns y, sigma, k and optional
/// covariates x1..xp.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid destination for
/// one pointer.
#[no_mangle]
pub unsafe extern "C" fn assure_dataset_from_csv(
    path: *const c_char,
    mode: i32,
    out: *mut *mut AssureDataset,
) -> i32 {
    if out.is_null() {
        return fail_null("out");
    }
    let path = match str_arg(path, "path") {
        Ok(s) => s,
        Err(code) => return code,
    };
    guarded(|| {
        let mode = match mode_of(mode) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        match Dataset::from_csv_path(std::path::Path::new(path), mode) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(AssureDataset(d)));
                ASSURE_OK
            }
            Err(e) => {
                *out = std::ptr::null_mut();
                fail(e)
            }
        }
    })
}

/// Number of units in the dataset; 0 for a null handle.
///
/// # Safety
/// `data`, when non-null, must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn assure_dataset_len(data: *const AssureDataset) -> usize {
    if data.is_null() {
        return 0;
    }
    (*data).0.n()
}

/// Releases a dataset handle. Null is a no-op.
///
/// # Safety
/// `data` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn assure_dataset_free(data: *mut AssureDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Builds a decision family from its JSON config. The dataset supplies
/// covariate dimensions and the ensemble family's fitted components.
///
/// # Safety
/// `config_json` must be NUL-terminated; `data` a live dataset handle;
/// `out` a valid destination for one pointer.
#[no_mangle]
pub unsafe extern "C" fn assure_family_from_json(
    config_json: *const c_char,
    data: *const AssureDataset,
    out: *mut *mut AssureFamily,
) -> i32 {
    if out.is_null() {
        return fail_null("out");
    }
    if data.is_null() {
        return fail_null("data");
    }
    let text = match str_arg(config_json, "config_json") {
        Ok(s) => s,
        Err(code) => return code,
    };
    let data = &(*data).0;
    guarded(|| {
        let value: serde_json::Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => {
                *out = std::ptr::null_mut();
                return fail(Error::config(format!("family config: {e}")));
            }
        };
        match DecisionFamily::from_json(&value, data) {
            Ok(f) => {
                *out = Box::into_raw(Box::new(AssureFamily(f)));
                ASSURE_OK
            }
            Err(e) => {
                *out = std::ptr::null_mut();
                fail(e)
            }
        }
    })
}

/// Parameter count of the family; 0 for a null handle.
///
/// # Safety
/// `family`, when non-null, must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn assure_family_dim(family: *const AssureFamily) -> usize {
    if family.is_null() {
        return 0;
    }
    (*family).0.dim()
}

/// Releases a family handle. Null is a no-op.
///
/// # Safety
/// `family` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn assure_family_free(family: *mut AssureFamily) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

unsafe fn handles<'a>(
    data: *const AssureDataset,
    family: *const AssureFamily,
) -> Result<(&'a Dataset, &'a DecisionFamily), i32> {
    if data.is_null() {
        return Err(fail_null("data"));
    }
    if family.is_null() {
        return Err(fail_null("family"));
    }
    Ok((&(*data).0, &(*family).0))
}

/// Evaluates one welfare estimate at `beta`. `method` selects the smoothed
/// (0), coupled-bootstrap (1), or count (2) estimator; `smoothing` is the
/// bandwidth or coupling scale, NaN for the default. Writes the estimate and
/// its standard error.
///
/// # Safety
/// `beta` must point to `beta_len` doubles; `out_value` and `out_stderr`
/// must be valid destinations; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn assure_welfare_estimate(
    data: *const AssureDataset,
    family: *const AssureFamily,
    beta: *const f64,
    beta_len: usize,
    method: i32,
    smoothing: f64,
    out_value: *mut f64,
    out_stderr: *mut f64,
) -> i32 {
    let (data, family) = match handles(data, family) {
        Ok(p) => p,
        Err(code) => return code,
    };
    if beta.is_null() {
        return fail_null("beta");
    }
    if out_value.is_null() || out_stderr.is_null() {
        return fail_null("out_value/out_stderr");
    }
    let beta = std::slice::from_raw_parts(beta, beta_len);
    guarded(|| {
        let method = match method_of(method, smoothing) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        match method.estimate(data, family, beta) {
            Ok(est) => {
                *out_value = est.value;
                *out_stderr = est.stderr;
                ASSURE_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Exhaustive grid argmax of the estimated welfare (families of up to two
/// parameters). Writes the argmax into `out_beta` (family dim entries) and
/// its estimate into `out_value`.
///
/// # Safety
/// `out_beta` must hold `assure_family_dim(family)` doubles; `out_value`
/// one double; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn assure_grid_argmax(
    data: *const AssureDataset,
    family: *const AssureFamily,
    method: i32,
    smoothing: f64,
    grid_size: usize,
    out_beta: *mut f64,
    out_value: *mut f64,
) -> i32 {
    let (data, family) = match handles(data, family) {
        Ok(p) => p,
        Err(code) => return code,
    };
    if out_beta.is_null() || out_value.is_null() {
        return fail_null("out_beta/out_value");
    }
    let out_beta = std::slice::from_raw_parts_mut(out_beta, family.dim());
    guarded(|| {
        let method = match method_of(method, smoothing) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        match grid_argmax(data, family, method, grid_size) {
            Ok(r) => {
                out_beta.copy_from_slice(&r.beta_hat);
                *out_value = r.value;
                ASSURE_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Multistart Nelder-Mead argmax of the estimated welfare. Deterministic in
/// (starts, seed) at any parallelism.
///
/// # Safety
/// Same contracts as `assure_grid_argmax`.
#[no_mangle]
pub unsafe extern "C" fn assure_multistart_argmax(
    data: *const AssureDataset,
    family: *const AssureFamily,
    method: i32,
    smoothing: f64,
    starts: usize,
    seed: u64,
    out_beta: *mut f64,
    out_value: *mut f64,
) -> i32 {
    let (data, family) = match handles(data, family) {
        Ok(p) => p,
        Err(code) => return code,
    };
    if out_beta.is_null() || out_value.is_null() {
        return fail_null("out_beta/out_value");
    }
    let out_beta = std::slice::from_raw_parts_mut(out_beta, family.dim());
    guarded(|| {
        let method = match method_of(method, smoothing) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        match multistart_argmax(data, family, method, starts, seed) {
            Ok(r) => {
                out_beta.copy_from_slice(&r.beta_hat);
                *out_value = r.value;
                ASSURE_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Evaluates the family's 0/1 decision for every unit at `beta`, writing one
/// byte per unit into `out` (length `assure_dataset_len(data)`).
///
/// # Safety
/// `beta` must point to `beta_len` doubles and `out` to one byte per unit;
/// handles must be live.
#[no_mangle]
pub unsafe extern "C" fn assure_decisions(
    data: *const AssureDataset,
    family: *const AssureFamily,
    beta: *const f64,
    beta_len: usize,
    out: *mut u8,
) -> i32 {
    let (data, family) = match handles(data, family) {
        Ok(p) => p,
        Err(code) => return code,
    };
    if beta.is_null() {
        return fail_null("beta");
    }
    if out.is_null() {
        return fail_null("out");
    }
    let beta = std::slice::from_raw_parts(beta, beta_len);
    let out = std::slice::from_raw_parts_mut(out, data.n());
    guarded(|| {
        for (i, u) in data.units().iter().enumerate() {
            match family.decide(i, &Context::of(u), beta, u.y) {
                Ok(d) => out[i] = u8::from(d),
                Err(e) => return fail(e),
            }
        }
        ASSURE_OK
    })
}
