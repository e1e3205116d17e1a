use std::ffi::CStr;
use std::ptr;

use otsieve::dgp::{draw_sample, DgpConfig};
use otsieve_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ots_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn sample_handle(preset: &str, n: usize, seed: u64) -> *mut OtsSample {
    let (_, s) = draw_sample(&DgpConfig::preset(preset, n, seed).unwrap()).unwrap();
    let x: Vec<f64> = (0..n).flat_map(|i| [s.x[(i, 0)], s.x[(i, 1)]]).collect();
    let y: Vec<f64> = (0..n).flat_map(|i| [s.y[(i, 0)], s.y[(i, 1)]]).collect();
    let mut h = ptr::null_mut();
    let st = unsafe { ots_sample_new(s.wage.as_ptr(), x.as_ptr(), y.as_ptr(), n, &mut h) };
    assert_eq!(st, OtsStatus::Ok);
    h
}

#[test]
fn noiseless_fit_through_handles() {
    let s = sample_handle("gaussian-noiseless", 200, 4);
    let mut r = ptr::null_mut();
    let st = unsafe { ots_estimate(s, OtsEstimator::Sls as i32, 2, 2, false, &mut r) };
    assert_eq!(st, OtsStatus::Ok, "{}", last_error());
    let mut p = [0.0; 4];
    assert_eq!(unsafe { ots_report_params(r, p.as_mut_ptr()) }, OtsStatus::Ok);
    for (got, want) in p.iter().zip([0.5, 0.2, 1.7, -0.4]) {
        assert!((got - want).abs() < 1e-6, "{p:?}");
    }
    let mut obj = f64::NAN;
    assert_eq!(unsafe { ots_report_objective(r, &mut obj) }, OtsStatus::Ok);
    assert!(obj <= 1e-12);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { ots_report_to_json(r, &mut json) }, OtsStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_string_lossy().into_owned();
    assert!(text.contains("\"alpha_cc\""));
    unsafe {
        ots_string_free(json);
        ots_report_free(r);
        ots_sample_free(s);
    }
}

#[test]
fn noisy_fit_reports_standard_errors() {
    let s = sample_handle("gaussian", 400, 9);
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { ots_estimate(s, OtsEstimator::Sgls as i32, 3, 3, false, &mut r) }, OtsStatus::Ok);
    let mut se = [0.0; 4];
    assert_eq!(unsafe { ots_report_std_errors(r, se.as_mut_ptr()) }, OtsStatus::Ok);
    assert!(se.iter().all(|v| v.is_finite() && *v > 0.0));
    unsafe {
        ots_report_free(r);
        ots_sample_free(s);
    }
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let s = sample_handle("gaussian", 50, 1);
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { ots_estimate(s, 7, 3, 3, false, &mut r) }, OtsStatus::InvalidArgument);
    assert!(last_error().contains("estimator"));
    assert_eq!(unsafe { ots_estimate(ptr::null(), 0, 3, 3, false, &mut r) }, OtsStatus::NullPointer);
    unsafe { ots_sample_free(s) };

    let w = [1.0, f64::NAN];
    let xy = [0.0; 4];
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ots_sample_new(w.as_ptr(), xy.as_ptr(), xy.as_ptr(), 2, &mut h) }, OtsStatus::Data);

    let mut c = ptr::null_mut();
    let surplus = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(unsafe { ots_solve_assignment(surplus.as_ptr(), 2, &mut c) }, OtsStatus::Ok);
    let mut small = [0usize; 1];
    assert_eq!(unsafe { ots_coupling_assignment(c, small.as_mut_ptr(), 1) }, OtsStatus::InvalidArgument);
    unsafe { ots_coupling_free(c) };

    let singular = [1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0];
    let mut m = OtsMardia::default();
    assert_eq!(unsafe { ots_mardia(singular.as_ptr(), 4, 2, &mut m) }, OtsStatus::Numerical);

    // null frees are no-ops
    unsafe {
        ots_coupling_free(ptr::null_mut());
        ots_report_free(ptr::null_mut());
        ots_sample_free(ptr::null_mut());
        ots_string_free(ptr::null_mut());
    }
}

#[test]
fn bilinear_duals_are_stable() {
    let x = [0.0, 0.0, 1.0, 0.5, -1.0, 2.0];
    let y = [1.0, 1.0, -0.5, 0.0, 0.3, -2.0];
    let a = [0.5, 0.0, 0.0, 0.2];
    let b = [1.7, -0.4];
    let mut c = ptr::null_mut();
    assert_eq!(
        unsafe { ots_solve_bilinear(x.as_ptr(), y.as_ptr(), 3, 2, a.as_ptr(), b.as_ptr(), &mut c) },
        OtsStatus::Ok
    );
    let mut u = [0.0; 3];
    let mut v = [0.0; 3];
    let mut asg = [0usize; 3];
    unsafe {
        assert_eq!(ots_coupling_worker_duals(c, u.as_mut_ptr(), 3), OtsStatus::Ok);
        assert_eq!(ots_coupling_firm_duals(c, v.as_mut_ptr(), 3), OtsStatus::Ok);
        assert_eq!(ots_coupling_assignment(c, asg.as_mut_ptr(), 3), OtsStatus::Ok);
        ots_coupling_free(c);
    }
    let s = |i: usize, j: usize| {
        a[0] * x[2 * i] * y[2 * j] + a[3] * x[2 * i + 1] * y[2 * j + 1] + b[0] * x[2 * i] + b[1] * x[2 * i + 1]
    };
    for i in 0..3 {
        for j in 0..3 {
            assert!(u[i] + v[j] >= s(i, j) - 1e-9);
        }
        assert!((u[i] + v[asg[i]] - s(i, asg[i])).abs() < 1e-9);
    }
}
