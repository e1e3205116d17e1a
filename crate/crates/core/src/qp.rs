//! Dense convex QPs
//!
//! ```text
//! minimise  0.5 x'Px - c'x   subject to  A x >= b
//! ```
//!
//! `P` must be positive definite. The solver works on the dual, a
//! nonnegativity-constrained quadratic in the multipliers, with the
//! Lawson-Hanson active-set scheme. Linearly dependent constraint rows (the
//! convexity rows of a tensor sieve are rank deficient) only make the dual
//! singular, which the least-squares subproblems absorb.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Constraints with a positive multiplier.
    pub active: Vec<usize>,
    /// Lagrange multipliers of `active`.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

pub fn objective(p: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(p * x)) - c.dot(x)
}

/// `warm` lists constraints to try as the initial positive set of the dual.
/// Returns a numerical error when the constraints admit no point.
pub fn solve(
    p: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    warm: &[usize],
) -> Result<QpSolution> {
    let n = p.nrows();
    let m = a.nrows();
    if p.ncols() != n || c.len() != n {
        return Err(Error::dimension("QP Hessian/linear term", n, c.len()));
    }
    if m > 0 && a.ncols() != n {
        return Err(Error::dimension("QP constraint matrix columns", n, a.ncols()));
    }
    if b.len() != m {
        return Err(Error::dimension("QP constraint right-hand side", m, b.len()));
    }
    let sym = (p + p.transpose()) * 0.5;
    let chol = sym.cholesky().ok_or_else(|| Error::Singular {
        what: "QP Hessian".into(),
        smallest_eigenvalue: smallest_eigenvalue(p),
    })?;
    let x_free = chol.solve(c);
    if m == 0 {
        return Ok(QpSolution { x: x_free, active: Vec::new(), multipliers: Vec::new(), iterations: 0 });
    }
    // dual: minimise 0.5 l'Ql + l'r over l >= 0
    let pinv_at = chol.solve(&a.transpose());
    let q = a * &pinv_at;
    let q = (&q + q.transpose()) * 0.5;
    let r = a * &x_free - b;
    let scale = q.amax().max(r.amax()).max(1e-300);
    let tol = 1e-13 * scale * (m as f64);

    let mut lambda = DVector::zeros(m);
    let mut positive: Vec<usize> = Vec::new();
    let mut warm_set: Vec<usize> = warm.iter().copied().filter(|&i| i < m).collect();
    warm_set.sort_unstable();
    warm_set.dedup();
    if !warm_set.is_empty() {
        let z = subproblem(&q, &r, &warm_set);
        if z.iter().all(|&v| v > 0.0) {
            for (k, &i) in warm_set.iter().enumerate() {
                lambda[i] = z[k];
            }
            positive = warm_set;
        }
    }

    let max_iter = 30 * m + 100;
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::NonConvergence {
                iterations: max_iter,
                detail: "dual active-set QP did not terminate".into(),
                last: (chol.solve(&(c + a.transpose() * &lambda))).iter().copied().collect(),
            });
        }
        let w = -(&q * &lambda + &r);
        let candidate = (0..m)
            .filter(|i| !positive.contains(i))
            .filter(|&i| w[i] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        positive.push(j);
        positive.sort_unstable();
        // inner loop keeps the positive set strictly feasible
        let mut inner = 0;
        loop {
            inner += 1;
            let z = subproblem(&q, &r, &positive);
            if z.iter().all(|&v| v > 0.0) {
                for (k, &i) in positive.iter().enumerate() {
                    lambda[i] = z[k];
                }
                break;
            }
            let mut alpha = 1.0_f64;
            for (k, &i) in positive.iter().enumerate() {
                if z[k] <= 0.0 {
                    let denom = lambda[i] - z[k];
                    if denom > 0.0 {
                        alpha = alpha.min(lambda[i] / denom);
                    }
                }
            }
            for (k, &i) in positive.iter().enumerate() {
                lambda[i] += alpha * (z[k] - lambda[i]);
            }
            let floor = 1e-14 * lambda.amax().max(1e-300);
            positive.retain(|&i| lambda[i] > floor);
            for i in 0..m {
                if !positive.contains(&i) {
                    lambda[i] = 0.0;
                }
            }
            if inner > m + 5 || positive.is_empty() {
                break;
            }
        }
    }
    let x = chol.solve(&(c + a.transpose() * &lambda));
    let slack = a * &x - b;
    let viol = -slack.min();
    if viol > 1e-7 * (1.0 + x.amax()) * (1.0 + a.amax()) {
        return Err(Error::Numerical(format!("QP constraints violated by {viol:e} at the dual solution (infeasible problem?)")));
    }
    let active: Vec<usize> = (0..m).filter(|&i| lambda[i] > 0.0).collect();
    let multipliers = active.iter().map(|&i| lambda[i]).collect();
    Ok(QpSolution { x, active, multipliers, iterations })
}

/// Least-squares minimiser of the dual restricted to `set` (others at zero).
fn subproblem(q: &DMatrix<f64>, r: &DVector<f64>, set: &[usize]) -> DVector<f64> {
    let k = set.len();
    let qs = DMatrix::from_fn(k, k, |i, j| q[(set[i], set[j])]);
    let rs = DVector::from_fn(k, |i, _| -r[set[i]]);
    let svd = qs.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    svd.solve(&rs, eps).unwrap_or_else(|_| DVector::zeros(k))
}

/// Unconstrained minimiser `x = P^{-1} c`.
pub fn solve_unconstrained(p: &DMatrix<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = p.clone().cholesky() {
        return Ok(ch.solve(c));
    }
    p.clone().lu().solve(c).ok_or_else(|| Error::Singular {
        what: "QP Hessian".into(),
        smallest_eigenvalue: smallest_eigenvalue(p),
    })
}

pub fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}
