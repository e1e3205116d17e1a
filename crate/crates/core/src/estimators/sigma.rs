//! Series estimate of the conditional residual covariance `E[rho rho' | x]`.

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use super::{residuals, EstimateReport};
use crate::error::{Error, Result};
use crate::sample::MatchedSample;
use crate::sieve::{basis_row, bic_score, Domain};

/// Ridge penalty used when the series design is rank deficient.
pub const SIGMA_RIDGE: f64 = 1e-8;

/// Default floor on the eigenvalues of `Sigma(x)` relative to the pooled
/// residual covariance (after whitening by it).
pub const RELATIVE_FLOOR: f64 = 0.25;

/// Entry order of the six distinct covariance elements.
const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaHat {
    pub k_c: usize,
    pub k_m: usize,
    pub domain: Domain,
    /// Series coefficients per entry, in the order
    /// (w,w), (w,C), (w,M), (C,C), (C,M), (M,M). Empty for a constant fit.
    pub coefficients: Vec<Vec<f64>>,
    /// Covariance used when `coefficients` is empty.
    pub constant: Option<[[f64; 3]; 3]>,
    /// Eigenvalue floor applied after symmetrisation.
    pub lambda_min: f64,
    /// Pooled covariance `sum rho rho' / n`; fitted values are floored at
    /// `relative_floor` times it in the whitened metric.
    pub pooled: Option<[[f64; 3]; 3]>,
    pub relative_floor: f64,
    /// Upper clip in the same whitened metric (`f64::INFINITY` disables it).
    pub relative_ceiling: f64,
    pub ridge_used: bool,
}

impl SigmaHat {
    /// A covariance that does not depend on x.
    pub fn constant(s: Matrix3<f64>, domain: Domain) -> Result<Self> {
        let trace = s.trace();
        if !(trace > 0.0) {
            return Err(Error::Domain("constant covariance must have positive trace".into()));
        }
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = 0.5 * (s[(i, j)] + s[(j, i)]);
            }
        }
        Ok(Self {
            k_c: 0,
            k_m: 0,
            domain,
            coefficients: Vec::new(),
            constant: Some(c),
            lambda_min: 1e-6 * trace / 3.0,
            pooled: None,
            relative_floor: 0.0,
            relative_ceiling: f64::INFINITY,
            ridge_used: false,
        })
    }

    pub fn identity(domain: Domain) -> Self {
        Self::constant(Matrix3::identity(), domain).expect("identity has positive trace")
    }

    /// Raw (unfloored, symmetrised) fitted covariance at `x`.
    pub fn raw(&self, x: [f64; 2]) -> Result<Matrix3<f64>> {
        if let Some(c) = &self.constant {
            return Ok(Matrix3::from_fn(|i, j| c[i][j]));
        }
        let row = basis_row(x, self.k_c, self.k_m, &self.domain)?;
        let mut s = Matrix3::zeros();
        for (k, &(a, b)) in PAIRS.iter().enumerate() {
            let v = crate::sieve::dot(&row, &self.coefficients[k]);
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
        Ok(s)
    }

    /// Symmetric positive definite covariance with eigenvalues >= `lambda_min`.
    pub fn eval(&self, x: [f64; 2]) -> Result<Matrix3<f64>> {
        let raw = self.raw(x)?;
        let relative = match &self.pooled {
            Some(p) if self.relative_floor > 0.0 => {
                let pooled = Matrix3::from_fn(|i, j| p[i][j]);
                match pooled.cholesky() {
                    Some(ch) => {
                        let l = ch.l();
                        let l_inv = l.try_inverse().unwrap_or_else(Matrix3::identity);
                        let white = l_inv * raw * l_inv.transpose();
                        l * clip_eigenvalues(&white, self.relative_floor, self.relative_ceiling)
                            * l.transpose()
                    }
                    None => raw,
                }
            }
            _ => raw,
        };
        Ok(floor_eigenvalues(&relative, self.lambda_min))
    }

    pub fn pooled_matrix(&self) -> Option<Matrix3<f64>> {
        self.pooled.map(|p| Matrix3::from_fn(|i, j| p[i][j]))
    }
}

fn to_array3(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    out
}

pub(crate) fn floor_eigenvalues(s: &Matrix3<f64>, floor: f64) -> Matrix3<f64> {
    clip_eigenvalues(s, floor, f64::INFINITY)
}

fn clip_eigenvalues(s: &Matrix3<f64>, floor: f64, ceiling: f64) -> Matrix3<f64> {
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(floor).min(ceiling));
    let out = eig.eigenvectors * Matrix3::from_diagonal(&d) * eig.eigenvectors.transpose();
    (out + out.transpose()) * 0.5
}

/// Regresses each distinct entry of `rho_i rho_i'` on the sieve basis.
///
/// Without explicit degrees, every pair up to those of the initial fit is
/// tried and the one with the smallest summed BIC over the six entry
/// regressions is kept. A near-constant covariance then gets a low-degree
/// fit instead of sixteen noisy coefficients per entry.
pub fn estimate_sigma0(
    sample: &MatchedSample,
    initial: &EstimateReport,
    degrees: Option<(usize, usize)>,
) -> Result<SigmaHat> {
    let rho = residuals(sample, &initial.theta, &initial.sieve)?;
    let domain = initial.sieve.domain;
    if let Some((k_c, k_m)) = degrees {
        return fit_from_residuals(sample, &rho, k_c, k_m, domain).map(|(s, _)| s);
    }
    let mut best: Option<(f64, SigmaHat)> = None;
    for k_c in 0..=initial.sieve.k_c {
        for k_m in 0..=initial.sieve.k_m {
            let (fit, score) = fit_from_residuals(sample, &rho, k_c, k_m, domain)?;
            // ties keep the smaller pair, visited first
            if best.as_ref().map_or(true, |(b, _)| score < *b) {
                best = Some((score, fit));
            }
        }
    }
    Ok(best.expect("at least the constant fit is tried").1)
}

/// The fitted covariance and its summed BIC over the six entries.
pub(crate) fn fit_from_residuals(
    sample: &MatchedSample,
    rho: &DMatrix<f64>,
    k_c: usize,
    k_m: usize,
    domain: Domain,
) -> Result<(SigmaHat, f64)> {
    let n = sample.len();
    let p = (k_c + 1) * (k_m + 1);
    let mut design = DMatrix::zeros(n, p);
    for i in 0..n {
        let row = basis_row(sample.x_row(i), k_c, k_m, &domain)?;
        for j in 0..p {
            design[(i, j)] = row[j];
        }
    }
    let mut mean_cov = Matrix3::zeros();
    for i in 0..n {
        let r = rho.row(i).transpose();
        mean_cov += &r * r.transpose();
    }
    mean_cov /= n as f64;
    let trace = mean_cov.trace();
    if !(trace > 0.0) {
        return Err(Error::Singular {
            what: "residual covariance (residuals are identically zero)".into(),
            smallest_eigenvalue: 0.0,
        });
    }

    let gram = design.tr_mul(&design);
    let eig = gram.clone().symmetric_eigenvalues();
    let (emin, emax) = (eig.min(), eig.max());
    let mut ridge_used = n < p || !(emin > 1e-12 * emax);
    let chol = if ridge_used {
        None
    } else {
        gram.clone().cholesky()
    };
    let chol = match chol {
        Some(c) => c,
        None => {
            ridge_used = true;
            (gram + DMatrix::identity(p, p) * SIGMA_RIDGE)
                .cholesky()
                .ok_or_else(|| Error::Singular {
                    what: "covariance series design".into(),
                    smallest_eigenvalue: emin,
                })?
        }
    };
    let mut coefficients = Vec::with_capacity(6);
    let mut score = 0.0;
    for &(a, b) in &PAIRS {
        let target = DVector::from_fn(n, |i, _| rho[(i, a)] * rho[(i, b)]);
        let coef = chol.solve(&design.tr_mul(&target));
        let rss = (&target - &design * &coef).norm_squared();
        score += bic_score(rss.max(f64::MIN_POSITIVE), n, p);
        coefficients.push(coef.iter().copied().collect());
    }
    let fit = SigmaHat {
        k_c,
        k_m,
        domain,
        coefficients,
        constant: None,
        lambda_min: 1e-6 * trace / 3.0,
        pooled: Some(to_array3(&mean_cov)),
        relative_floor: RELATIVE_FLOOR,
        relative_ceiling: 1.0 / RELATIVE_FLOOR,
        ridge_used,
    };
    Ok((fit, score))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flooring_makes_positive_definite() {
        let s = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0 - 1e-9);
        let f = floor_eigenvalues(&s, 1e-6);
        let e = f.symmetric_eigenvalues();
        assert!(e.min() >= 1e-6 * (1.0 - 1e-9));
        assert!(f.cholesky().is_some());
    }
}
