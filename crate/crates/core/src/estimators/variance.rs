//! Sandwich covariance of the technology parameters.
//!
//! `(kappa, b, gamma)` is treated as one finite-dimensional parameter:
//! `V1 = E[D'WD]`, `V2 = E[D'W rho rho' W D]` and the covariance of the
//! estimate is `V1^{-1} V2 V1^{-1} / n`, from which the technology block is
//! read off. Inequality constraints are ignored, so the result is a local
//! approximation when convexity constraints bind.

use nalgebra::{DMatrix, Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use super::{residuals, to_array4, EstimateReport, StdErrors};
use crate::error::{Error, Result};
use crate::sample::MatchedSample;
use crate::sieve::basis_eval;

use super::sigma::SigmaHat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceResult {
    /// (kappa_C, kappa_M, beta_C, beta_M)
    pub vcov_kappa: [[f64; 4]; 4],
    /// (alpha_CC, alpha_MM, beta_C, beta_M)
    pub vcov_alpha: [[f64; 4]; 4],
    pub std_errors: StdErrors,
    pub bread_min_eigenvalue: f64,
    /// Full bread and meat, scaled by 1/n (parameter order kappa, b, gamma).
    #[serde(skip)]
    pub v1: DMatrix<f64>,
    #[serde(skip)]
    pub v2: DMatrix<f64>,
}

/// Sandwich covariance with weights `W_i = sigma(x_i)^{-1}`; identity weights when `sigma` is `None`.
pub fn variance_theta(
    report: &EstimateReport,
    sample: &MatchedSample,
    sigma: Option<&SigmaHat>,
) -> Result<VarianceResult> {
    let theta = report.theta;
    let sieve = &report.sieve;
    let n = sample.len();
    let p = sieve.n_coefficients();
    let k = 4 + p;
    let rho = residuals(sample, &theta, sieve)?;

    let mut v1 = DMatrix::zeros(k, k);
    let mut v2 = DMatrix::zeros(k, k);
    let mut d = DMatrix::zeros(3, k);
    for i in 0..n {
        let x = sample.x_row(i);
        let e = basis_eval(x, sieve.k_c, sieve.k_m, &sieve.domain)?;
        let tc = crate::sieve::dot(&e.grad_c, &sieve.gamma);
        let tm = crate::sieve::dot(&e.grad_m, &sieve.gamma);
        d.fill(0.0);
        d[(0, 2)] = -x[0];
        d[(0, 3)] = -x[1];
        d[(1, 0)] = -tc;
        d[(2, 1)] = -tm;
        for j in 0..p {
            d[(0, 4 + j)] = -e.value[j];
            d[(1, 4 + j)] = -theta.kappa_c * e.grad_c[j];
            d[(2, 4 + j)] = -theta.kappa_m * e.grad_m[j];
        }
        let w = match sigma {
            None => Matrix3::identity(),
            Some(s) => s
                .eval(x)?
                .try_inverse()
                .ok_or_else(|| Error::Numerical("conditional covariance not invertible".into()))?,
        };
        let wd = DMatrix::from_fn(3, k, |a, c| (0..3).map(|b| w[(a, b)] * d[(b, c)]).sum());
        v1 += d.tr_mul(&wd);
        let r = rho.row(i);
        // rho' W D, a 1 x k row
        let s = DMatrix::from_fn(1, k, |_, c| (0..3).map(|a| r[a] * wd[(a, c)]).sum());
        v2 += s.tr_mul(&s);
    }
    let nf = n as f64;
    v1 /= nf;
    v2 /= nf;
    let v1 = (&v1 + v1.transpose()) * 0.5;

    let eig = v1.clone().symmetric_eigenvalues();
    let (emin, emax) = (eig.min(), eig.max().abs().max(1e-300));
    if !(emin > 1e-13 * emax) {
        return Err(Error::Singular {
            what: "sandwich bread matrix".into(),
            smallest_eigenvalue: emin,
        });
    }
    let inv = v1.clone().cholesky().map(|c| c.inverse()).ok_or(Error::Singular {
        what: "sandwich bread matrix".into(),
        smallest_eigenvalue: emin,
    })?;
    let full = &inv * &v2 * &inv / nf;
    let vk = Matrix4::from_fn(|a, b| 0.5 * (full[(a, b)] + full[(b, a)]));
    let jac = Matrix4::from_diagonal(&nalgebra::Vector4::new(
        -1.0 / (theta.kappa_c * theta.kappa_c),
        -1.0 / (theta.kappa_m * theta.kappa_m),
        1.0,
        1.0,
    ));
    let va = jac * vk * jac.transpose();
    let sd = |m: &Matrix4<f64>, i: usize| m[(i, i)].max(0.0).sqrt();
    let se_kc = sd(&vk, 0);
    let se_km = sd(&vk, 1);
    Ok(VarianceResult {
        vcov_kappa: to_array4(&vk),
        vcov_alpha: to_array4(&va),
        std_errors: StdErrors {
            kappa_c: se_kc,
            kappa_m: se_km,
            alpha_cc: delta_alpha_se(theta.kappa_c, se_kc),
            alpha_mm: delta_alpha_se(theta.kappa_m, se_km),
            beta_c: sd(&vk, 2),
            beta_m: sd(&vk, 3),
        },
        bread_min_eigenvalue: emin,
        v1,
        v2,
    })
}

/// `se(1/kappa) = se(kappa) / kappa^2`.
pub fn delta_alpha_se(kappa: f64, se_kappa: f64) -> f64 {
    se_kappa / (kappa * kappa)
}
