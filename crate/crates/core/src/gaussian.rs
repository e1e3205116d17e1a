//! Quadratic-Gaussian matching model: the linear assignment map, the
//! closed-form quadratic wage, and parametric maximum-likelihood baselines.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, BfgsOptions};
use crate::ot::ProductionTech;
use crate::sample::MatchedSample;
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianEquilibrium {
    pub j: Matrix2<f64>,
    pub rho_x: f64,
    pub rho_y: f64,
    pub delta: f64,
}

impl GaussianEquilibrium {
    pub fn new(rho_x: f64, rho_y: f64, delta: f64) -> Result<Self> {
        Ok(Self {
            j: closed_form_j(rho_x, rho_y, delta)?,
            rho_x,
            rho_y,
            delta,
        })
    }

    pub fn assign(&self, x: [f64; 2]) -> [f64; 2] {
        let y = self.j * nalgebra::Vector2::new(x[0], x[1]);
        [y[0], y[1]]
    }
}

/// Assignment matrix `y* = J x` for standard-normal margins with skill
/// correlation `rho_x`, requirement correlation `rho_y` and
/// `delta = alpha_MM / alpha_CC`.
pub fn closed_form_j(rho_x: f64, rho_y: f64, delta: f64) -> Result<Matrix2<f64>> {
    if !(rho_x.abs() < 1.0) || !(rho_y.abs() < 1.0) {
        return Err(Error::Domain(format!(
            "correlations must lie strictly inside (-1, 1); got rho_x = {rho_x}, rho_y = {rho_y}"
        )));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("complementarity ratio must be positive, got {delta}")));
    }
    let sx = (1.0 - rho_x * rho_x).sqrt();
    let sy = (1.0 - rho_y * rho_y).sqrt();
    let ratio = sy / sx;
    let off = rho_y - rho_x * ratio;
    let scale = 1.0 / (1.0 + 2.0 * delta * (rho_x * rho_y + sy * sx) + delta * delta).sqrt();
    Ok(Matrix2::new(
        1.0 + delta * ratio,
        delta * off,
        off,
        delta + ratio,
    ) * scale)
}

fn diagonal_alphas(tech: &ProductionTech) -> Result<(f64, f64)> {
    if tech.dim() != 2 || !tech.is_diagonal() {
        return Err(Error::Domain(
            "the closed-form wage needs a two-task technology with diagonal A".into(),
        ));
    }
    let (acc, amm) = (tech.a()[(0, 0)], tech.a()[(1, 1)]);
    if !(acc > 0.0 && amm > 0.0) {
        return Err(Error::Domain("closed-form wage needs positive complementarities".into()));
    }
    Ok((acc, amm))
}

/// Hessian of the closed-form wage; symmetric because `J_21 = J_12 / delta`.
pub fn wage_hessian(tech: &ProductionTech, j: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let (acc, amm) = diagonal_alphas(tech)?;
    let delta = amm / acc;
    Ok(Matrix2::new(
        acc * j[(0, 0)],
        acc * j[(0, 1)],
        acc * j[(0, 1)],
        acc * delta * j[(1, 1)],
    ))
}

/// `w*(x) = (a_CC/2)(J11 x_C^2 + 2 J12 x_C x_M + delta J22 x_M^2) + b'x + c`.
///
/// Fails if the implied wage is not convex.
pub fn closed_form_wage(x: [f64; 2], tech: &ProductionTech, j: &Matrix2<f64>, c: f64) -> Result<f64> {
    let h = wage_hessian(tech, j)?;
    if h[(0, 0)] < 0.0 || h[(1, 1)] < 0.0 || h.determinant() < -1e-12 * h.norm_squared() {
        return Err(Error::Domain(format!(
            "closed-form wage is not convex (Hessian diagonal {:.4}, {:.4}, determinant {:e})",
            h[(0, 0)],
            h[(1, 1)],
            h.determinant()
        )));
    }
    let b = tech.b();
    Ok(0.5 * (h[(0, 0)] * x[0] * x[0] + 2.0 * h[(0, 1)] * x[0] * x[1] + h[(1, 1)] * x[1] * x[1])
        + b[0] * x[0]
        + b[1] * x[1]
        + c)
}

pub fn closed_form_wage_gradient(x: [f64; 2], tech: &ProductionTech, j: &Matrix2<f64>) -> Result<[f64; 2]> {
    let h = wage_hessian(tech, j)?;
    let b = tech.b();
    Ok([
        h[(0, 0)] * x[0] + h[(0, 1)] * x[1] + b[0],
        h[(1, 0)] * x[0] + h[(1, 1)] * x[1] + b[1],
    ])
}

/// Requirement correlation purged of measurement error in `y`.
pub fn corrected_rho_y(rho_tilde: f64, var1: f64, var2: f64, sigma_c2: f64, sigma_m2: f64) -> Result<f64> {
    let d1 = var1 - sigma_c2;
    let d2 = var2 - sigma_m2;
    if !(d1 > 0.0 && d2 > 0.0) {
        return Err(Error::Domain(format!(
            "inadmissible error variances: var(y) - sigma^2 = ({d1:e}, {d2:e}) must be positive"
        )));
    }
    Ok(rho_tilde * (var1 * var2).sqrt() / (d1.sqrt() * d2.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MLFit {
    pub alpha_cc: f64,
    pub alpha_mm: f64,
    pub beta_c: f64,
    pub beta_m: f64,
    pub c: f64,
    pub sigma_w: f64,
    pub sigma_c: f64,
    pub sigma_m: f64,
    pub loglik: f64,
    pub rho_x: f64,
    /// Requirement correlation used inside J at the optimum.
    pub rho_y: f64,
    pub corrected: bool,
    pub iterations: usize,
    pub starts: usize,
}

struct MlData {
    w: Vec<f64>,
    xc: Vec<f64>,
    xm: Vec<f64>,
    yc: Vec<f64>,
    ym: Vec<f64>,
    rho_x: f64,
    rho_tilde: f64,
    var_yc: f64,
    var_ym: f64,
}

struct MlEval {
    loglik: f64,
    beta: [f64; 3],
    sigma2: [f64; 3],
    rho_y: f64,
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Concentrated Gaussian log likelihood; `params = (ln a_CC, ln a_MM[, t_C, t_M])`.
fn ml_eval(d: &MlData, params: &[f64]) -> Option<MlEval> {
    let acc = params[0].exp();
    let amm = params[1].exp();
    let corrected = params.len() == 4;
    let (rho_y, fixed_sigma) = if corrected {
        let s2c = d.var_yc * logistic(params[2]);
        let s2m = d.var_ym * logistic(params[3]);
        let r = corrected_rho_y(d.rho_tilde, d.var_yc, d.var_ym, s2c, s2m).ok()?;
        (r, Some((s2c, s2m)))
    } else {
        (d.rho_tilde, None)
    };
    let delta = amm / acc;
    let j = closed_form_j(d.rho_x, rho_y, delta).ok()?;
    let n = d.w.len();
    let nf = n as f64;

    // wage equation: OLS of w - quadratic on (1, x_C, x_M)
    let mut xtx = nalgebra::Matrix3::<f64>::zeros();
    let mut xty = nalgebra::Vector3::<f64>::zeros();
    let mut resid_q = Vec::with_capacity(n);
    for i in 0..n {
        let (xc, xm) = (d.xc[i], d.xm[i]);
        let q = 0.5 * acc * (j[(0, 0)] * xc * xc + 2.0 * j[(0, 1)] * xc * xm + delta * j[(1, 1)] * xm * xm);
        let z = d.w[i] - q;
        resid_q.push(z);
        let r = nalgebra::Vector3::new(1.0, xc, xm);
        xtx += r * r.transpose();
        xty += r * z;
    }
    let coef = xtx.cholesky()?.solve(&xty);
    let mut ssw = 0.0;
    let mut ssc = 0.0;
    let mut ssm = 0.0;
    for i in 0..n {
        let (xc, xm) = (d.xc[i], d.xm[i]);
        let e = resid_q[i] - coef[0] - coef[1] * xc - coef[2] * xm;
        ssw += e * e;
        let ec = d.yc[i] - (j[(0, 0)] * xc + j[(0, 1)] * xm);
        let em = d.ym[i] - (j[(1, 0)] * xc + j[(1, 1)] * xm);
        ssc += ec * ec;
        ssm += em * em;
    }
    let s2w = ssw / nf;
    let mut ll = -0.5 * nf * (LN_2PI + s2w.ln() + 1.0);
    let (s2c, s2m) = match fixed_sigma {
        Some((s2c, s2m)) => {
            ll += -0.5 * nf * (LN_2PI + s2c.ln()) - ssc / (2.0 * s2c);
            ll += -0.5 * nf * (LN_2PI + s2m.ln()) - ssm / (2.0 * s2m);
            (s2c, s2m)
        }
        None => {
            let (s2c, s2m) = (ssc / nf, ssm / nf);
            ll += -0.5 * nf * (LN_2PI + s2c.ln() + 1.0);
            ll += -0.5 * nf * (LN_2PI + s2m.ln() + 1.0);
            (s2c, s2m)
        }
    };
    if !ll.is_finite() {
        return None;
    }
    Some(MlEval {
        loglik: ll,
        beta: [coef[0], coef[1], coef[2]],
        sigma2: [s2w, s2c, s2m],
        rho_y,
    })
}

/// Parametric ML for the quadratic-Gaussian model. Inputs are expected to
/// have standard-normal margins. With `use_corrected_rho` the requirement
/// correlation is purged of measurement error using error variances that
/// are estimated jointly with the technology.
pub fn ml_fit(sample: &MatchedSample, use_corrected_rho: bool) -> Result<MLFit> {
    let n = sample.len();
    if n < 8 {
        return Err(Error::InvalidInput(format!("ML fit needs at least 8 observations, got {n}")));
    }
    let xc = sample.column(1);
    let xm = sample.column(2);
    let yc = sample.column(3);
    let ym = sample.column(4);
    let data = MlData {
        rho_x: stats::correlation(&xc, &xm),
        rho_tilde: stats::correlation(&yc, &ym),
        var_yc: stats::variance(&yc),
        var_ym: stats::variance(&ym),
        w: sample.wage.clone(),
        xc,
        xm,
        yc,
        ym,
    };
    let objective = |p: &[f64]| ml_eval(&data, p).map_or(f64::INFINITY, |e| -e.loglik / n as f64);

    let starts: [[f64; 2]; 5] = [[0.0, 0.0], [-0.7, -0.7], [0.7, 0.7], [-0.7, 0.7], [0.7, -0.7]];
    let t0 = (0.2f64 / 0.8).ln();
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    let mut last_err = None;
    for s in starts {
        let mut x0 = s.to_vec();
        if use_corrected_rho {
            x0.extend([t0, t0]);
        }
        if !objective(&x0).is_finite() {
            continue;
        }
        match optim::minimize(&objective, &x0, BfgsOptions::default()) {
            Ok(r) => {
                if best.as_ref().map_or(true, |b| r.f < b.0) {
                    best = Some((r.f, r.x, r.iterations));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((_, params, iterations)) = best else {
        return Err(last_err.unwrap_or_else(|| {
            Error::Domain("no admissible starting point for the ML fit".into())
        }));
    };
    let e = ml_eval(&data, &params)
        .ok_or_else(|| Error::Numerical("ML optimum is not admissible".into()))?;
    Ok(MLFit {
        alpha_cc: params[0].exp(),
        alpha_mm: params[1].exp(),
        c: e.beta[0],
        beta_c: e.beta[1],
        beta_m: e.beta[2],
        sigma_w: e.sigma2[0].sqrt(),
        sigma_c: e.sigma2[1].sqrt(),
        sigma_m: e.sigma2[2].sqrt(),
        loglik: e.loglik,
        rho_x: data.rho_x,
        rho_y: e.rho_y,
        corrected: use_corrected_rho,
        iterations,
        starts: starts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncorrelated_unit_ratio_is_identity() {
        let j = closed_form_j(0.0, 0.0, 1.0).unwrap();
        assert!((j - Matrix2::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn equal_correlations_are_diagonal() {
        for (r, d) in [(-0.6, 0.3), (0.2, 2.5), (0.9, 1.0)] {
            let j = closed_form_j(r, r, d).unwrap();
            assert!(j[(0, 1)].abs() < 1e-15 && j[(1, 0)].abs() < 1e-15);
        }
    }

    #[test]
    fn reference_design_matches_term_by_term_values() {
        // evaluated independently in high precision
        let j = closed_form_j(-0.4, -0.5, 0.4).unwrap();
        let expect = Matrix2::new(0.98552314, -0.03491203, -0.08728007, 0.96188336);
        assert!((j - expect).abs().max() < 5e-9, "{j}");
    }

    #[test]
    fn domain_violations() {
        assert!(closed_form_j(1.0, 0.0, 1.0).is_err());
        assert!(closed_form_j(0.0, -1.2, 1.0).is_err());
        assert!(closed_form_j(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn wage_at_origin_and_unit_point() {
        let tech = ProductionTech::diagonal(0.5, 0.2, 1.7, -0.4).unwrap();
        let j = closed_form_j(-0.4, -0.5, 0.4).unwrap();
        assert_eq!(closed_form_wage([0.0, 0.0], &tech, &j, 30.0).unwrap(), 30.0);
        let w = closed_form_wage([1.0, 0.0], &tech, &j, 30.0).unwrap();
        assert!((w - (0.25 * j[(0, 0)] + 1.7 + 30.0)).abs() < 1e-13);
    }

    #[test]
    fn non_diagonal_technology_rejected() {
        let tech = ProductionTech::new(
            nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            nalgebra::DVector::zeros(2),
        )
        .unwrap();
        let j = closed_form_j(0.0, 0.0, 1.0).unwrap();
        assert!(closed_form_wage([0.0, 0.0], &tech, &j, 0.0).is_err());
    }

    #[test]
    fn correction_is_identity_without_noise() {
        assert_eq!(corrected_rho_y(-0.37, 1.3, 0.8, 0.0, 0.0).unwrap(), -0.37);
        assert!(corrected_rho_y(-0.37, 1.0, 1.0, 1.0, 0.5).is_err());
    }
}
