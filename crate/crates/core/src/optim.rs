//! BFGS with central-difference gradients and backtracking.
//!
//! The objective may return `+inf` or NaN on inadmissible points; the line
//! search treats those as failed trials and shrinks the step.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the gradient sup-norm falls below `grad_tol * (1 + |f|)`.
    pub grad_tol: f64,
    /// Stop when an iteration improves f by less than `f_tol * (1 + |f|)`.
    pub f_tol: f64,
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            grad_tol: 1e-8,
            f_tol: 1e-13,
            fd_step: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

pub fn numeric_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], fx: f64, step: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xt = x.to_vec();
    for i in 0..x.len() {
        let h = step * (1.0 + x[i].abs());
        xt[i] = x[i] + h;
        let fp = f(&xt);
        xt[i] = x[i] - h;
        let fm = f(&xt);
        xt[i] = x[i];
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - fx) / h,
            (false, true) => (fx - fm) / h,
            (false, false) => 0.0,
        };
    }
    g
}

pub fn minimize(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], opts: BfgsOptions) -> Result<BfgsResult> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(Error::Numerical("objective is not finite at the starting point".into()));
    }
    let mut g = numeric_gradient(f, &x, fx, opts.fd_step);
    let mut h = identity(n);
    let mut fresh = true;

    for iter in 0..opts.max_iter {
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm <= opts.grad_tol * (1.0 + fx.abs()) {
            return Ok(BfgsResult { x, f: fx, iterations: iter });
        }
        let mut d: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| h[i][j] * g[j]).sum::<f64>()).collect();
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            h = identity(n);
            d = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let ft = f(&xt);
            if ft.is_finite() && ft <= fx + 1e-4 * t * slope {
                accepted = Some((xt, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if !fresh {
                h = identity(n);
                fresh = true;
                continue;
            }
            if gnorm <= 1e-4 * (1.0 + fx.abs()) {
                return Ok(BfgsResult { x, f: fx, iterations: iter });
            }
            return Err(Error::NonConvergence {
                iterations: iter,
                detail: format!("line search failed (gradient norm {gnorm:e})"),
                last: x,
            });
        };
        let gn = numeric_gradient(f, &xn, fnew, opts.fd_step);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let improvement = fx - fnew;
        x = xn;
        g = gn;
        fx = fnew;
        if sy > 1e-12 * s.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt() {
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        if improvement <= opts.f_tol * (1.0 + fx.abs()) {
            return Ok(BfgsResult { x, f: fx, iterations: iter + 1 });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        detail: "quasi-Newton iteration limit".into(),
        last: x,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

// Inverse-Hessian update H+ = (I - r s y') H (I - r y s') + r s s'.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -r * (hy[i] * s[j] + s[i] * hy[j]) + (r * r * yhy + r) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize(&f, &[-1.2, 1.0], BfgsOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn infinite_region_is_avoided() {
        // minimum at x = 0.9 next to a wall at x = 1
        let f = |x: &[f64]| if x[0] >= 1.0 { f64::INFINITY } else { (x[0] - 0.9).powi(2) };
        let r = minimize(&f, &[0.0], BfgsOptions::default()).unwrap();
        assert!((r.x[0] - 0.9).abs() < 1e-5);
    }
}
