//! Sieve estimators of the diagonal bilinear technology.
//!
//! The residual vector of observation `i` is
//!
//! ```text
//! rho_i = ( w_i   - w_n(x_i) - x_i'b,
//!           y_Ci  - kappa_C * dw_n/dx_C(x_i),
//!           y_Mi  - kappa_M * dw_n/dx_M(x_i) )
//! ```
//!
//! with `kappa = 1 / alpha` and `w_n` a tensor Bernstein polynomial. SLS
//! minimises `sum rho'rho`, SGLS reweights by an estimated conditional
//! covariance, and SML maximises the concentrated Gaussian log likelihood
//! `-(n/2) log det(sum rho rho' / n)`. The Jacobian of the residual map
//! with respect to the observables is the identity, so no log-Jacobian term
//! enters that likelihood.

mod engine;
mod fit;
mod sigma;
mod variance;

use nalgebra::{DMatrix, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::MatchedSample;
use crate::sieve::{basis_eval, BernsteinTensor, Domain};

pub use fit::{sgls_fit, sgls_fit_with_sigma, sls_fit, sml_fit};
pub use sigma::{estimate_sigma0, SigmaHat, RELATIVE_FLOOR};
pub use variance::{delta_alpha_se, variance_theta, VarianceResult};

/// Largest |kappa| before the fit is treated as sitting on the alpha = 0 boundary.
pub const KAPPA_BOUND: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub kappa_c: f64,
    pub kappa_m: f64,
    pub beta_c: f64,
    pub beta_m: f64,
}

impl Theta {
    pub fn new(kappa_c: f64, kappa_m: f64, beta_c: f64, beta_m: f64) -> Result<Self> {
        let t = Self {
            kappa_c,
            kappa_m,
            beta_c,
            beta_m,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_alphas(alpha_cc: f64, alpha_mm: f64, beta_c: f64, beta_m: f64) -> Result<Self> {
        Self::new(1.0 / alpha_cc, 1.0 / alpha_mm, beta_c, beta_m)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.kappa_c, self.kappa_m, self.beta_c, self.beta_m];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("technology parameters".into()));
        }
        if self.kappa_c == 0.0 || self.kappa_m == 0.0 {
            return Err(Error::Domain("kappa must be nonzero so that alpha = 1/kappa exists".into()));
        }
        Ok(())
    }

    pub fn alpha_cc(&self) -> f64 {
        1.0 / self.kappa_c
    }

    pub fn alpha_mm(&self) -> f64 {
        1.0 / self.kappa_m
    }

    /// `(alpha_CC, alpha_MM, beta_C, beta_M)`.
    pub fn alpha_params(&self) -> [f64; 4] {
        [self.alpha_cc(), self.alpha_mm(), self.beta_c, self.beta_m]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Sml,
    Sls,
    Sgls,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Sml => "SML",
            EstimatorKind::Sls => "SLS",
            EstimatorKind::Sgls => "SGLS",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sml" => Ok(Self::Sml),
            "sls" => Ok(Self::Sls),
            "sgls" => Ok(Self::Sgls),
            other => Err(Error::Config(format!("unknown sieve estimator '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub k_c: usize,
    pub k_m: usize,
    pub convexity: bool,
    /// Sieve box; taken from the data when absent.
    pub domain: Option<Domain>,
    pub max_iter: usize,
    /// Relative kappa move that ends the block-coordinate loop.
    pub tol: f64,
    /// Multipliers applied to the moment-based starting kappa.
    pub start_scales: Vec<f64>,
    /// Cap on FGLS re-weighting rounds for SML.
    pub max_reweight: usize,
    pub compute_se: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            k_c: 3,
            k_m: 3,
            convexity: false,
            domain: None,
            max_iter: 500,
            tol: 1e-10,
            start_scales: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            max_reweight: 100,
            compute_se: true,
        }
    }
}

impl FitOptions {
    pub fn with_degrees(k_c: usize, k_m: usize) -> Self {
        Self {
            k_c,
            k_m,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub restarts: usize,
    pub converged: bool,
    /// Relative kappa move of the last block-coordinate update.
    pub last_move: f64,
    pub active_constraints: usize,
    /// A kappa hit `KAPPA_BOUND`, i.e. an alpha estimate at zero.
    pub boundary: bool,
    /// Largest objective increase seen across iterations (should be ~0).
    pub max_objective_increase: f64,
    /// SML re-weighting rounds, SGLS covariance-stage metadata.
    pub reweight_rounds: usize,
    pub sigma_ridge: bool,
    /// Residuals vanish; SML falls back to the least-squares fit.
    pub exact_fit: bool,
}

/// Standard errors; `kappa_*` are on the fitted scale, `alpha_*` by the delta method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StdErrors {
    pub kappa_c: f64,
    pub kappa_m: f64,
    pub alpha_cc: f64,
    pub alpha_mm: f64,
    pub beta_c: f64,
    pub beta_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub theta: Theta,
    pub alpha_cc: f64,
    pub alpha_mm: f64,
    pub sieve: BernsteinTensor,
    pub convexity: bool,
    /// SLS / SGLS: weighted residual sum of squares. SML: concentrated log likelihood.
    pub objective: f64,
    /// Covariance of (kappa_C, kappa_M, beta_C, beta_M).
    pub vcov: Option<[[f64; 4]; 4]>,
    /// Covariance of (alpha_CC, alpha_MM, beta_C, beta_M).
    pub vcov_alpha: Option<[[f64; 4]; 4]>,
    pub std_errors: Option<StdErrors>,
    /// Reason code when standard errors are absent.
    pub se_unavailable: Option<String>,
    pub convergence: Convergence,
}

impl EstimateReport {
    pub fn alpha_params(&self) -> [f64; 4] {
        self.theta.alpha_params()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub(crate) fn attach_variance(&mut self, v: Result<VarianceResult>) {
        match v {
            Ok(v) if self.convergence.boundary => {
                self.vcov = Some(v.vcov_kappa);
                self.se_unavailable = Some("boundary".into());
            }
            Ok(v) => {
                self.vcov = Some(v.vcov_kappa);
                self.vcov_alpha = Some(v.vcov_alpha);
                self.std_errors = Some(v.std_errors);
            }
            Err(Error::Singular { smallest_eigenvalue, .. }) => {
                self.se_unavailable =
                    Some(format!("singular_bread(min_eig={smallest_eigenvalue:e})"));
            }
            Err(e) => self.se_unavailable = Some(format!("{}: {e}", e.kind_name())),
        }
    }
}

pub(crate) fn to_array4(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = m[(i, j)];
        }
    }
    out
}

/// n x 3 residual matrix, columns (wage, y_C, y_M).
pub fn residuals(sample: &MatchedSample, theta: &Theta, sieve: &BernsteinTensor) -> Result<DMatrix<f64>> {
    theta.validate()?;
    let n = sample.len();
    let mut out = DMatrix::zeros(n, 3);
    for i in 0..n {
        let x = sample.x_row(i);
        let e = basis_eval(x, sieve.k_c, sieve.k_m, &sieve.domain)?;
        let w = crate::sieve::dot(&e.value, &sieve.gamma);
        let gc = crate::sieve::dot(&e.grad_c, &sieve.gamma);
        let gm = crate::sieve::dot(&e.grad_m, &sieve.gamma);
        out[(i, 0)] = sample.wage[i] - w - x[0] * theta.beta_c - x[1] * theta.beta_m;
        out[(i, 1)] = sample.y[(i, 0)] - theta.kappa_c * gc;
        out[(i, 2)] = sample.y[(i, 1)] - theta.kappa_m * gm;
    }
    Ok(out)
}
