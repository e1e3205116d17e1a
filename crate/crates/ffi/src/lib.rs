//! C ABI over the otsieve library.
//!
//! Objects cross the boundary as opaque handles created by `ots_*_new` or a
//! solver call and released by the matching `ots_*_free`. Every function
//! returns an [`OtsStatus`]; on failure the message is available from
//! [`ots_last_error_message`] on the same thread. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use otsieve::estimators::{sgls_fit, sls_fit, sml_fit, EstimateReport, FitOptions};
use otsieve::ot::{self, Coupling, ProductionTech};
use otsieve::{diagnostics, gaussian, Error, ErrorClass, MatchedSample};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtsStatus {
    Ok = 0,
    /// Bad argument or configuration.
    InvalidArgument = 1,
    /// Malformed or non-finite data.
    Data = 2,
    /// Singular system, non-convergence or other numerical failure.
    Numerical = 3,
    NullPointer = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
    /// The requested quantity does not exist for this object.
    Unavailable = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtsEstimator {
    Sml = 0,
    Sls = 1,
    Sgls = 2,
}

/// Mardia statistics for one data matrix.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OtsMardia {
    pub b1: f64,
    pub b2: f64,
    pub skew_stat: f64,
    pub skew_df: f64,
    pub skew_p: f64,
    pub kurt_stat: f64,
    pub kurt_p: f64,
}

/// Optimal assignment with dual potentials.
pub struct OtsCoupling {
    inner: Coupling,
}

/// Matched sample `(wage, x, y)`.
pub struct OtsSample {
    inner: MatchedSample,
}

/// Fitted sieve estimator.
pub struct OtsReport {
    inner: EstimateReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn status_of(e: &Error) -> OtsStatus {
    match e.class() {
        ErrorClass::Usage => OtsStatus::InvalidArgument,
        ErrorClass::Data => OtsStatus::Data,
        ErrorClass::Numerical => OtsStatus::Numerical,
    }
}

struct Fail(OtsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(OtsStatus::NullPointer, format!("null pointer: {what}"))
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> OtsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            OtsStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            OtsStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread ("" after a success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ots_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ots_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Solves the n x n assignment maximising total surplus (row-major `surplus`).
///
/// # Safety
/// `surplus` must point to `n * n` doubles and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ots_solve_assignment(
    surplus: *const f64,
    n: usize,
    out: *mut *mut OtsCoupling,
) -> OtsStatus {
    guard(|| {
        let s = slice(surplus, n * n, "surplus")?;
        let m = ot::SurplusMatrix::from_matrix(DMatrix::from_row_slice(n, n, s))?;
        let c = ot::solve_assignment(&m)?;
        write_out(out, Box::into_raw(Box::new(OtsCoupling { inner: c })), "out")
    })
}

/// Builds `s(x, y) = x'Ay + x'b` for `n` workers and jobs of dimension `d`
/// (row-major `n x d` clouds, `d x d` matrix `a`) and solves the assignment.
///
/// # Safety
/// All pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ots_solve_bilinear(
    workers: *const f64,
    jobs: *const f64,
    n: usize,
    d: usize,
    a: *const f64,
    b: *const f64,
    out: *mut *mut OtsCoupling,
) -> OtsStatus {
    guard(|| {
        let x = DMatrix::from_row_slice(n, d, slice(workers, n * d, "workers")?);
        let y = DMatrix::from_row_slice(n, d, slice(jobs, n * d, "jobs")?);
        let tech = ProductionTech::new(
            DMatrix::from_row_slice(d, d, slice(a, d * d, "a")?),
            DVector::from_column_slice(slice(b, d, "b")?),
        )?;
        let s = ot::build_surplus_matrix(&x, &y, &tech)?;
        let c = ot::solve_assignment(&s)?;
        write_out(out, Box::into_raw(Box::new(OtsCoupling { inner: c })), "out")
    })
}

/// Number of matched pairs.
///
/// # Safety
/// `c` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ots_coupling_len(c: *const OtsCoupling, out: *mut usize) -> OtsStatus {
    guard(|| {
        let c = handle(c, "coupling")?;
        write_out(out, c.inner.assignment.len(), "out")
    })
}

/// Job index matched to each worker; `out` holds `len` entries.
///
/// # Safety
/// `c` must be a live handle and `out` writable for `len` entries.
#[no_mangle]
pub unsafe extern "C" fn ots_coupling_assignment(
    c: *const OtsCoupling,
    out: *mut usize,
    len: usize,
) -> OtsStatus {
    guard(|| {
        let c = handle(c, "coupling")?;
        copy_into(&c.inner.assignment, out, len)
    })
}

/// Worker potentials (wages); `out` holds `len` entries.
///
/// # Safety
/// `c` must be a live handle and `out` writable for `len` entries.
#[no_mangle]
pub unsafe extern "C" fn ots_coupling_worker_duals(
    c: *const OtsCoupling,
    out: *mut f64,
    len: usize,
) -> OtsStatus {
    guard(|| {
        let c = handle(c, "coupling")?;
        copy_into(&c.inner.worker_dual, out, len)
    })
}

/// Job potentials (profits); `out` holds `len` entries.
///
/// # Safety
/// `c` must be a live handle and `out` writable for `len` entries.
#[no_mangle]
pub unsafe extern "C" fn ots_coupling_firm_duals(
    c: *const OtsCoupling,
    out: *mut f64,
    len: usize,
) -> OtsStatus {
    guard(|| {
        let c = handle(c, "coupling")?;
        copy_into(&c.inner.firm_dual, out, len)
    })
}

/// # Safety
/// `c` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ots_coupling_total_surplus(c: *const OtsCoupling, out: *mut f64) -> OtsStatus {
    guard(|| {
        let c = handle(c, "coupling")?;
        write_out(out, c.inner.total_surplus, "out")
    })
}

/// # Safety
/// `c` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ots_coupling_free(c: *mut OtsCoupling) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

unsafe fn copy_into<T: Copy>(src: &[T], out: *mut T, len: usize) -> Result<(), Fail> {
    if len != src.len() {
        return Err(Fail(
            OtsStatus::InvalidArgument,
            format!("buffer length {len} does not match {}", src.len()),
        ));
    }
    if len == 0 {
        return Ok(());
    }
    if out.is_null() {
        return Err(null("out"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, len);
    Ok(())
}

/// Closed-form Gaussian assignment matrix, row-major into `out[4]`.
///
/// # Safety
/// `out` must be writable for 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn ots_closed_form_j(rho_x: f64, rho_y: f64, delta: f64, out: *mut f64) -> OtsStatus {
    guard(|| {
        let j = gaussian::closed_form_j(rho_x, rho_y, delta)?;
        let vals = [j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]];
        copy_into(&vals, out, 4)
    })
}

/// Copies `n` observations: `wage[n]`, `x[n*2]`, `y[n*2]`.
///
/// # Safety
/// Pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ots_sample_new(
    wage: *const f64,
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut *mut OtsSample,
) -> OtsStatus {
    guard(|| {
        let w = slice(wage, n, "wage")?.to_vec();
        let x = DMatrix::from_row_slice(n, 2, slice(x, 2 * n, "x")?);
        let y = DMatrix::from_row_slice(n, 2, slice(y, 2 * n, "y")?);
        let s = MatchedSample::new(w, x, y)?;
        write_out(out, Box::into_raw(Box::new(OtsSample { inner: s })), "out")
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ots_sample_free(s: *mut OtsSample) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Fits a sieve estimator with tensor degrees `(k_c, k_m)`; `estimator`
/// takes an [`OtsEstimator`] value.
///
/// # Safety
/// `sample` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ots_estimate(
    sample: *const OtsSample,
    estimator: i32,
    k_c: usize,
    k_m: usize,
    convexity: bool,
    out: *mut *mut OtsReport,
) -> OtsStatus {
    guard(|| {
        let s = handle(sample, "sample")?;
        let opts = FitOptions {
            convexity,
            ..FitOptions::with_degrees(k_c, k_m)
        };
        let r = match estimator {
            x if x == OtsEstimator::Sml as i32 => sml_fit(&s.inner, &opts),
            x if x == OtsEstimator::Sls as i32 => sls_fit(&s.inner, &opts),
            x if x == OtsEstimator::Sgls as i32 => sgls_fit(&s.inner, &opts),
            other => {
                return Err(Fail(OtsStatus::InvalidArgument, format!("unknown estimator code {other}")))
            }
        }?;
        write_out(out, Box::into_raw(Box::new(OtsReport { inner: r })), "out")
    })
}

/// `(alpha_CC, alpha_MM, beta_C, beta_M)` into `out[4]`.
///
/// # Safety
/// `r` must be a live handle and `out` writable for 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn ots_report_params(r: *const OtsReport, out: *mut f64) -> OtsStatus {
    guard(|| {
        let r = handle(r, "report")?;
        copy_into(&r.inner.alpha_params(), out, 4)
    })
}

/// Standard errors of `(alpha_CC, alpha_MM, beta_C, beta_M)`; `UNAVAILABLE`
/// when the fit reports none (boundary or singular bread).
///
/// # Safety
/// `r` must be a live handle and `out` writable for 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn ots_report_std_errors(r: *const OtsReport, out: *mut f64) -> OtsStatus {
    guard(|| {
        let r = handle(r, "report")?;
        match &r.inner.std_errors {
            Some(se) => copy_into(&[se.alpha_cc, se.alpha_mm, se.beta_c, se.beta_m], out, 4),
            None => Err(Fail(
                OtsStatus::Unavailable,
                format!(
                    "standard errors unavailable: {}",
                    r.inner.se_unavailable.as_deref().unwrap_or("not computed")
                ),
            )),
        }
    })
}

/// # Safety
/// `r` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ots_report_objective(r: *const OtsReport, out: *mut f64) -> OtsStatus {
    guard(|| {
        let r = handle(r, "report")?;
        write_out(out, r.inner.objective, "out")
    })
}

/// Full report as a JSON string; release it with [`ots_string_free`].
///
/// # Safety
/// `r` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ots_report_to_json(r: *const OtsReport, out: *mut *mut c_char) -> OtsStatus {
    guard(|| {
        let r = handle(r, "report")?;
        let s = CString::new(r.inner.to_json()?)
            .map_err(|e| Fail(OtsStatus::Numerical, e.to_string()))?;
        write_out(out, s.into_raw(), "out")
    })
}

/// # Safety
/// `r` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ots_report_free(r: *mut OtsReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ots_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Mardia's test on a row-major `n x d` matrix.
///
/// # Safety
/// `data` must hold `n * d` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn ots_mardia(data: *const f64, n: usize, d: usize, out: *mut OtsMardia) -> OtsStatus {
    guard(|| {
        let m = DMatrix::from_row_slice(n, d, slice(data, n * d, "data")?);
        let r = diagnostics::mardia_test(&m)?;
        write_out(
            out,
            OtsMardia {
                b1: r.b1,
                b2: r.b2,
                skew_stat: r.skew_stat,
                skew_df: r.skew_df,
                skew_p: r.skew_p,
                kurt_stat: r.kurt_stat,
                kurt_p: r.kurt_p,
            },
            "out",
        )
    })
}
