//! C ABI over `magnon-gk`.
//!
//! Conventions:
//! - every fallible call returns an [`MgkStatus`]; `MGK_STATUS_OK` is zero;
//! - objects are opaque handles created by `mgk_*_new`/`mgk_*_run` and
//!   released by the matching `mgk_*_free` (null is accepted and ignored);
//! - on failure, [`mgk_last_error_message`] describes the most recent error on
//!   the calling thread;
//! - structured inputs (run configs, certification options, series kinds)
//!   are JSON strings in the same schema as the CLI config.
//!
//! The header `include/magnon_gk.h` is generated by the build script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use magnon_gk::greenkubo::{estimate_correlation, estimate_kappa, run_ensemble, Ensemble, Estimator, RunConfig};
use magnon_gk::lattice::{Charge, LatticeSpec};
use magnon_gk::resolvent::{certify, CertifyOptions};
use magnon_gk::spectral::{closed_form_series, d_closed, fit_exponent, kappa_gk_closed, GkSetting, QuadOptions, SeriesKind, Variant};
use magnon_gk::Error;

/// Status codes; one per library error kind plus ABI-level failures.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgkStatus {
    Ok = 0,
    InvalidSpec = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    BackendMismatch = 4,
    CapExceeded = 5,
    QuadratureFailure = 6,
    ComplexRoots = 7,
    Degenerate = 8,
    SingularSystem = 9,
    EmptyEnsemble = 10,
    LagExceedsHorizon = 11,
    Io = 12,
    Parse = 13,
    ToleranceExceeded = 14,
    NullPointer = 15,
    InvalidUtf8 = 16,
    Panic = 17,
}

impl MgkStatus {
    fn from_error(e: &Error) -> Self {
        match e.code() {
            "invalid_spec" => MgkStatus::InvalidSpec,
            "invalid_argument" => MgkStatus::InvalidArgument,
            "dimension_mismatch" => MgkStatus::DimensionMismatch,
            "backend_mismatch" => MgkStatus::BackendMismatch,
            "cap_exceeded" => MgkStatus::CapExceeded,
            "quadrature_failure" => MgkStatus::QuadratureFailure,
            "complex_roots" => MgkStatus::ComplexRoots,
            "degenerate" => MgkStatus::Degenerate,
            "singular_system" => MgkStatus::SingularSystem,
            "empty_ensemble" => MgkStatus::EmptyEnsemble,
            "lag_exceeds_horizon" => MgkStatus::LagExceedsHorizon,
            "io" => MgkStatus::Io,
            "parse" => MgkStatus::Parse,
            "tolerance_exceeded" => MgkStatus::ToleranceExceeded,
            _ => MgkStatus::InvalidArgument,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgkCharge {
    Zero = 0,
    Uniform = 1,
    Alternate = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgkVariant {
    Zero = 0,
    I = 1,
    II = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgkEstimator {
    EnsembleFromOrigin = 0,
    TimeAverage = 1,
}

/// Opaque lattice description.
pub struct MgkSpec(LatticeSpec);

/// Opaque simulated ensemble.
pub struct MgkEnsemble(Ensemble);

/// Opaque time series `(t, value, error)`; the error column is a standard
/// error for estimates and a quadrature error for closed forms.
pub struct MgkSeries {
    times: Vec<f64>,
    values: Vec<f64>,
    errors: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Fail {
    Lib(Error),
    Abi(MgkStatus, String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> MgkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            MgkStatus::Ok
        }
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(&e.to_string());
            MgkStatus::from_error(&e)
        }
        Ok(Err(Fail::Abi(s, m))) => {
            set_last_error(&m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("panic: {m}"));
            MgkStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Abi(MgkStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail::Abi(MgkStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn into_handle<T>(x: T) -> *mut T {
    Box::into_raw(Box::new(x))
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn quad(rel_tol: f64) -> QuadOptions {
    if rel_tol > 0.0 {
        QuadOptions::rel(rel_tol)
    } else {
        QuadOptions::default()
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mgk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread (empty after a success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mgk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Frees a string returned by this library (e.g. a JSON report).
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mgk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Position-coordinate spec (uniform charge if `b != 0`, zero otherwise).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mgk_spec_new_position(
    d: usize,
    dstar: usize,
    n: usize,
    b: f64,
    gamma: f64,
    out: *mut *mut MgkSpec,
) -> MgkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = into_handle(MgkSpec(LatticeSpec::position(d, dstar, n, b, gamma)?));
        Ok(())
    })
}

/// Deformation-coordinate chain (`d = 1`, `d* = 2`).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mgk_spec_new_deformation(
    n: usize,
    b: f64,
    gamma: f64,
    charge: MgkCharge,
    out: *mut *mut MgkSpec,
) -> MgkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let c = match charge {
            MgkCharge::Zero => Charge::Zero,
            MgkCharge::Uniform => Charge::Uniform,
            MgkCharge::Alternate => Charge::Alternate,
        };
        *out = into_handle(MgkSpec(LatticeSpec::deformation(n, b, gamma, c)?));
        Ok(())
    })
}

/// Number of lattice sites `N^d`.
///
/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mgk_spec_sites(spec: *const MgkSpec, out: *mut usize) -> MgkStatus {
    guard(|| {
        *out_ptr(out, "out")? = deref(spec, "spec")?.0.sites();
        Ok(())
    })
}

/// # Safety
/// `spec` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mgk_spec_free(spec: *mut MgkSpec) {
    free_handle(spec)
}

/// Samples and simulates an ensemble described by a run-config JSON
/// (`spec`, `ensemble`, `n_traj`, `t_end`, `dt_out`, `seed`, optional
/// `backend` and `options`).
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mgk_ensemble_run(config_json: *const c_char, out: *mut *mut MgkEnsemble) -> MgkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg: RunConfig = serde_json::from_str(read_str(config_json, "config_json")?).map_err(Error::from)?;
        *out = into_handle(MgkEnsemble(run_ensemble(&cfg)?));
        Ok(())
    })
}

/// Number of trajectories.
///
/// # Safety
/// `ens` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mgk_ensemble_len(ens: *const MgkEnsemble, out: *mut usize) -> MgkStatus {
    guard(|| {
        *out_ptr(out, "out")? = deref(ens, "ensemble")?.0.trajectories.len();
        Ok(())
    })
}

/// Largest per-site continuity residual over all trajectories, or a
/// negative value if per-bond tracking was off.
///
/// # Safety
/// `ens` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mgk_ensemble_continuity_residual(ens: *const MgkEnsemble, out: *mut f64) -> MgkStatus {
    guard(|| {
        let e = deref(ens, "ensemble")?;
        let r = e.0.trajectories.iter().map(|t| t.continuity_residual()).collect::<Option<Vec<f64>>>();
        *out_ptr(out, "out")? = r.map_or(-1.0, |v| v.into_iter().fold(0.0, f64::max));
        Ok(())
    })
}

/// # Safety
/// `ens` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mgk_ensemble_free(ens: *mut MgkEnsemble) {
    free_handle(ens)
}

/// Current autocorrelation on lags `0..=max_lag` output steps.
///
/// # Safety
/// `ens` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mgk_ensemble_correlation(
    ens: *const MgkEnsemble,
    estimator: MgkEstimator,
    direction: usize,
    max_lag: usize,
    out: *mut *mut MgkSeries,
) -> MgkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let est = match estimator {
            MgkEstimator::EnsembleFromOrigin => Estimator::EnsembleFromOrigin,
            MgkEstimator::TimeAverage => Estimator::TimeAverage,
        };
        let c = estimate_correlation(&deref(ens, "ensemble")?.0, est, direction, max_lag)?;
        *out = into_handle(MgkSeries { times: c.times, values: c.values, errors: c.stderr });
        Ok(())
    })
}

/// Direct estimator of `κ^{a,b}(t)`; needs a run with current tracking.
///
/// # Safety
/// `ens` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mgk_ensemble_kappa(
    ens: *const MgkEnsemble,
    a: usize,
    b: usize,
    out: *mut *mut MgkSeries,
) -> MgkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let c = estimate_kappa(&deref(ens, "ensemble")?.0, a, b)?;
        *out = into_handle(MgkSeries { times: c.times, values: c.values, errors: c.stderr });
        Ok(())
    })
}

/// Closed-form series at `times[0..len]`; `kind_json` follows the CLI
/// `closedform.kind` schema. `rel_tol <= 0` selects the default tolerance.
///
/// # Safety
/// `kind_json` NUL-terminated; `times` readable for `len` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mgk_closed_form_series(
    kind_json: *const c_char,
    times: *const f64,
    len: usize,
    b: f64,
    gamma: f64,
    rel_tol: f64,
    out: *mut *mut MgkSeries,
) -> MgkStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let kind: SeriesKind = serde_json::from_str(read_str(kind_json, "kind_json")?).map_err(Error::from)?;
        if times.is_null() && len > 0 {
            return Err(null("times"));
        }
        let ts = if len == 0 { &[][..] } else { std::slice::from_raw_parts(times, len) };
        let s = closed_form_series(kind, ts, b, gamma, &quad(rel_tol))?;
        *out = into_handle(MgkSeries { times: s.times, values: s.values, errors: s.errors });
        Ok(())
    })
}

/// # Safety
/// `s` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mgk_series_len(s: *const MgkSeries, out: *mut usize) -> MgkStatus {
    guard(|| {
        *out_ptr(out, "out")? = deref(s, "series")?.times.len();
        Ok(())
    })
}

/// Copies the three columns into caller buffers of `capacity` values each
/// (any buffer may be null to skip it). Fails if `capacity` is too small.
///
/// # Safety
/// Non-null buffers must be writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn mgk_series_copy(
    s: *const MgkSeries,
    times: *mut f64,
    values: *mut f64,
    errors: *mut f64,
    capacity: usize,
) -> MgkStatus {
    guard(|| {
        let s = deref(s, "series")?;
        let n = s.times.len();
        if capacity < n {
            return Err(Error::DimensionMismatch { expected: n, got: capacity }.into());
        }
        for (src, dst) in [(&s.times, times), (&s.values, values), (&s.errors, errors)] {
            if !dst.is_null() {
                ptr::copy_nonoverlapping(src.as_ptr(), dst, n);
            }
        }
        Ok(())
    })
}

/// Log-log least-squares slope over `[t0, t1]`.
///
/// # Safety
/// `s` must be a live handle; `slope`, `stderr` writable.
#[no_mangle]
pub unsafe extern "C" fn mgk_series_fit_exponent(
    s: *const MgkSeries,
    t0: f64,
    t1: f64,
    slope: *mut f64,
    stderr: *mut f64,
) -> MgkStatus {
    guard(|| {
        let s = deref(s, "series")?;
        let f = fit_exponent(&s.times, &s.values, [t0, t1])?;
        *out_ptr(slope, "slope")? = f.slope;
        *out_ptr(stderr, "stderr")? = f.stderr;
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mgk_series_free(s: *mut MgkSeries) {
    free_handle(s)
}

/// Closed-form canonical correlation `D^{(#)}(t)` with its quadrature error.
///
/// # Safety
/// `value`, `error` writable.
#[no_mangle]
pub unsafe extern "C" fn mgk_d_closed(
    t: f64,
    variant: MgkVariant,
    b: f64,
    gamma: f64,
    beta: f64,
    rel_tol: f64,
    value: *mut f64,
    error: *mut f64,
) -> MgkStatus {
    guard(|| {
        let v = match variant {
            MgkVariant::Zero => Variant::Zero,
            MgkVariant::I => Variant::I,
            MgkVariant::II => Variant::II,
        };
        let e = d_closed(t, v, b, gamma, beta, &quad(rel_tol))?;
        *out_ptr(value, "value")? = e.value;
        *out_ptr(error, "error")? = e.error;
        Ok(())
    })
}

/// Closed-form microcanonical Green–Kubo integral `κ(t)`.
///
/// # Safety
/// `value`, `error` writable.
#[no_mangle]
pub unsafe extern "C" fn mgk_kappa_closed_micro(
    t: f64,
    d: usize,
    dstar: usize,
    b: f64,
    gamma: f64,
    rel_tol: f64,
    value: *mut f64,
    error: *mut f64,
) -> MgkStatus {
    guard(|| {
        let e = kappa_gk_closed(t, GkSetting::Micro { d, dstar }, b, gamma, &quad(rel_tol))?;
        *out_ptr(value, "value")? = e.value;
        *out_ptr(error, "error")? = e.error;
        Ok(())
    })
}

/// Runs the resolvent certification matrix. `options_json` may be null for
/// the default matrix. Writes the JSON report (free with
/// [`mgk_string_free`]) and whether every case passed; a failing matrix is
/// not an error.
///
/// # Safety
/// `options_json` null or NUL-terminated; `report_json`, `all_pass` writable.
#[no_mangle]
pub unsafe extern "C" fn mgk_certify(
    options_json: *const c_char,
    report_json: *mut *mut c_char,
    all_pass: *mut bool,
) -> MgkStatus {
    guard(|| {
        let report_json = out_ptr(report_json, "report_json")?;
        let all_pass = out_ptr(all_pass, "all_pass")?;
        let opts: CertifyOptions = if options_json.is_null() {
            CertifyOptions::default()
        } else {
            serde_json::from_str(read_str(options_json, "options_json")?).map_err(Error::from)?
        };
        let r = certify(&opts)?;
        let s = serde_json::to_string(&r).map_err(Error::from)?;
        *all_pass = r.all_pass;
        *report_json = CString::new(s).map_err(|e| Fail::Abi(MgkStatus::InvalidUtf8, e.to_string()))?.into_raw();
        Ok(())
    })
}
