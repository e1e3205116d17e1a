use nalgebra::{DMatrix, DVector, Matrix3};

use super::engine::{Blocks, Design, Problem, Solution};
use super::sigma::{self, SigmaHat};
use super::{
    variance_theta, Convergence, EstimateReport, EstimatorKind, FitOptions, Theta,
};
use crate::error::{Error, Result};
use crate::sample::MatchedSample;
use crate::sieve::{BernsteinTensor, Domain};
use crate::stats;

fn prepare(sample: &MatchedSample, opts: &FitOptions) -> Result<Design> {
    let p = (opts.k_c + 1) * (opts.k_m + 1);
    if sample.len() < p + 4 {
        return Err(Error::InvalidInput(format!(
            "{} observations cannot identify {} sieve coefficients plus 4 technology parameters",
            sample.len(),
            p
        )));
    }
    if opts.k_c == 0 || opts.k_m == 0 {
        return Err(Error::Config("sieve degrees must be at least 1 so gradients exist".into()));
    }
    let domain = match opts.domain {
        Some(d) => d,
        None => Domain::from_data(&sample.x)?,
    };
    Design::new(sample, opts.k_c, opts.k_m, domain)
}

/// Slope (with intercept) of y on the gradient of a least-squares wage fit.
fn moment_start(design: &Design) -> [f64; 2] {
    let p = design.p;
    let basis = design.d[0].columns(0, p);
    let gram = basis.tr_mul(&basis) + DMatrix::identity(p, p) * 1e-10;
    let rhs = basis.tr_mul(&design.z.column(0));
    let Some(gamma) = gram.cholesky().map(|c| c.solve(&rhs)) else {
        return [1.0, 1.0];
    };
    let mut out = [1.0; 2];
    for (c, slot) in out.iter_mut().enumerate() {
        let g: Vec<f64> = (design.d[1 + c].columns(0, p) * &gamma).iter().copied().collect();
        let y: Vec<f64> = design.z.column(1 + c).iter().copied().collect();
        let vg = stats::variance(&g);
        if vg > 0.0 {
            let mg = stats::mean(&g);
            let my = stats::mean(&y);
            let cov = g.iter().zip(&y).map(|(a, b)| (a - mg) * (b - my)).sum::<f64>()
                / (g.len() - 1) as f64;
            let k = cov / vg;
            if k.is_finite() && k.abs() > 1e-6 {
                *slot = k.clamp(-1e3, 1e3);
            }
        }
    }
    out
}

fn multi_start(
    problem: &Problem,
    kappa0: [f64; 2],
    opts: &FitOptions,
) -> Result<(Solution, usize)> {
    let mut best: Option<Solution> = None;
    let mut last_err = None;
    for &s in &opts.start_scales {
        match problem.run([kappa0[0] * s, kappa0[1] * s], &[], opts.max_iter, opts.tol) {
            Ok(sol) => {
                if best.as_ref().map_or(true, |b| sol.objective < b.objective) {
                    best = Some(sol);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let restarts = opts.start_scales.len();
    best.map(|b| (b, restarts)).ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::Config("no starting values supplied".into()))
    })
}

fn split_q(q: &DVector<f64>, p: usize) -> (Vec<f64>, f64, f64) {
    (q.rows(0, p).iter().copied().collect(), q[p], q[p + 1])
}

fn q_of(report: &EstimateReport) -> DVector<f64> {
    let mut v = report.sieve.gamma.clone();
    v.push(report.theta.beta_c);
    v.push(report.theta.beta_m);
    DVector::from_vec(v)
}

fn weighted_ssr(rho: &DMatrix<f64>, weights: &dyn Fn(usize) -> Matrix3<f64>) -> f64 {
    (0..rho.nrows())
        .map(|i| {
            let r = rho.row(i).transpose();
            let r3 = nalgebra::Vector3::new(r[0], r[1], r[2]);
            r3.dot(&(weights(i) * r3))
        })
        .sum()
}

fn residual_covariance(rho: &DMatrix<f64>) -> Matrix3<f64> {
    let n = rho.nrows() as f64;
    let mut s = Matrix3::zeros();
    for i in 0..rho.nrows() {
        let r = nalgebra::Vector3::new(rho[(i, 0)], rho[(i, 1)], rho[(i, 2)]);
        s += r * r.transpose();
    }
    s / n
}

fn log_likelihood(s: &Matrix3<f64>, n: usize) -> f64 {
    -0.5 * n as f64 * s.determinant().ln()
}

fn build_report(
    kind: EstimatorKind,
    design: &Design,
    sol: &Solution,
    restarts: usize,
    opts: &FitOptions,
) -> Result<EstimateReport> {
    let (gamma, beta_c, beta_m) = split_q(&sol.q, design.p);
    let theta = Theta::new(sol.kappa[0], sol.kappa[1], beta_c, beta_m)?;
    let sieve = BernsteinTensor::new(design.k_c, design.k_m, design.domain, gamma)?;
    Ok(EstimateReport {
        estimator: kind,
        n: design.n,
        alpha_cc: theta.alpha_cc(),
        alpha_mm: theta.alpha_mm(),
        theta,
        sieve,
        convexity: opts.convexity,
        objective: sol.objective,
        vcov: None,
        vcov_alpha: None,
        std_errors: None,
        se_unavailable: None,
        convergence: Convergence {
            iterations: sol.iterations,
            restarts,
            converged: sol.converged,
            last_move: sol.last_move,
            active_constraints: sol.active.len(),
            boundary: sol.boundary,
            max_objective_increase: sol.max_increase,
            ..Convergence::default()
        },
    })
}

/// Sieve least squares: minimises the unweighted residual sum of squares.
pub fn sls_fit(sample: &MatchedSample, opts: &FitOptions) -> Result<EstimateReport> {
    let design = prepare(sample, opts)?;
    let raw = Blocks::cross_moments(&design);
    let blocks = Blocks::with_constant_weight(&raw, &Matrix3::identity());
    let problem = Problem::new(&blocks, &design, opts.convexity);
    let (sol, restarts) = multi_start(&problem, moment_start(&design), opts)?;
    let mut report = build_report(EstimatorKind::Sls, &design, &sol, restarts, opts)?;
    let rho = design.residuals(sol.kappa, &sol.q);
    report.objective = weighted_ssr(&rho, &|_| Matrix3::identity());
    if opts.compute_se {
        report.attach_variance(variance_theta(&report, sample, None));
    }
    Ok(report)
}

/// Three-step sieve GLS: SLS, series covariance, then the reweighted fit.
pub fn sgls_fit(sample: &MatchedSample, opts: &FitOptions) -> Result<EstimateReport> {
    let first = sls_fit(
        sample,
        &FitOptions {
            compute_se: false,
            ..opts.clone()
        },
    )?;
    let sigma = sigma::estimate_sigma0(sample, &first, None)?;
    fit_weighted(sample, opts, &sigma, Some(&first))
}

/// The reweighting step with a caller-supplied covariance. Multi-starts
/// as SLS does.
pub fn sgls_fit_with_sigma(
    sample: &MatchedSample,
    opts: &FitOptions,
    sigma: &SigmaHat,
) -> Result<EstimateReport> {
    fit_weighted(sample, opts, sigma, None)
}

fn fit_weighted(
    sample: &MatchedSample,
    opts: &FitOptions,
    sigma: &SigmaHat,
    warm: Option<&EstimateReport>,
) -> Result<EstimateReport> {
    let design = prepare(sample, opts)?;
    let weights: Vec<Matrix3<f64>> = (0..design.n)
        .map(|i| {
            sigma
                .eval(sample.x_row(i))?
                .try_inverse()
                .ok_or_else(|| Error::Numerical("conditional covariance not invertible".into()))
        })
        .collect::<Result<_>>()?;
    let blocks = Blocks::with_row_weights(&design, &weights);
    let problem = Problem::new(&blocks, &design, opts.convexity);
    let (sol, restarts) = match warm {
        Some(r) => {
            let sol = problem.run(
                [r.theta.kappa_c, r.theta.kappa_m],
                &[],
                opts.max_iter,
                opts.tol,
            )?;
            (sol, 1)
        }
        None => multi_start(&problem, moment_start(&design), opts)?,
    };
    let mut report = build_report(EstimatorKind::Sgls, &design, &sol, restarts, opts)?;
    let rho = design.residuals(sol.kappa, &sol.q);
    report.objective = weighted_ssr(&rho, &|i| weights[i]);
    report.convergence.sigma_ridge = sigma.ridge_used;
    if opts.compute_se {
        report.attach_variance(variance_theta(&report, sample, Some(sigma)));
    }
    Ok(report)
}

/// Sieve ML on the concentrated Gaussian likelihood, by iterated feasible
/// GLS: each round minimises `sum rho' S^{-1} rho` for the current residual
/// covariance `S`, which can only raise the likelihood.
pub fn sml_fit(sample: &MatchedSample, opts: &FitOptions) -> Result<EstimateReport> {
    let ls = sls_fit(
        sample,
        &FitOptions {
            compute_se: false,
            ..opts.clone()
        },
    )?;
    let design = prepare(sample, opts)?;
    let raw = Blocks::cross_moments(&design);
    let n = design.n;

    let mut kappa = [ls.theta.kappa_c, ls.theta.kappa_m];
    let q = q_of(&ls);
    let mut active: Vec<usize> = Vec::new();
    let mut s = residual_covariance(&design.residuals(kappa, &q));
    let data_scale = (0..3)
        .map(|a| design.z.column(a).norm_squared() / n as f64)
        .sum::<f64>()
        .max(1e-300);
    // residual RMS below 1e-6 of the data scale: nothing left to weight
    if s.trace() <= 1e-12 * data_scale {
        let mut report = ls;
        report.estimator = EstimatorKind::Sml;
        report.convergence.exact_fit = true;
        if opts.compute_se {
            report.attach_variance(variance_theta(&report, sample, None));
        }
        return Ok(report);
    }
    let eig_min = s.symmetric_eigenvalues().min();
    if !(eig_min > 1e-12 * s.trace()) {
        return Err(Error::Singular {
            what: "residual covariance (try a lower sieve degree)".into(),
            smallest_eigenvalue: eig_min,
        });
    }

    let mut ll = log_likelihood(&s, n);
    let mut last: Option<Solution> = None;
    let mut rounds = 0;
    let mut max_increase: f64 = 0.0;
    let mut iterations = 0;
    let mut boundary = ls.convergence.boundary;
    for round in 1..=opts.max_reweight {
        rounds = round;
        let w = s
            .try_inverse()
            .ok_or_else(|| Error::Numerical("residual covariance not invertible".into()))?;
        let blocks = Blocks::with_constant_weight(&raw, &w);
        let problem = Problem::new(&blocks, &design, opts.convexity);
        let sol = problem.run(kappa, &active, opts.max_iter, opts.tol)?;
        iterations += sol.iterations;
        boundary |= sol.boundary;
        max_increase = max_increase.max(sol.max_increase);
        let s_new = residual_covariance(&design.residuals(sol.kappa, &sol.q));
        let eig_new = s_new.symmetric_eigenvalues().min();
        if !(eig_new > 1e-12 * s_new.trace()) {
            return Err(Error::Singular {
                what: "residual covariance (try a lower sieve degree)".into(),
                smallest_eigenvalue: eig_new,
            });
        }
        let ll_new = log_likelihood(&s_new, n);
        // likelihood must not fall between rounds
        max_increase = max_increase.max((ll - ll_new) / (1.0 + ll.abs()));
        let kn = sol.kappa[0].abs().max(sol.kappa[1].abs()).max(1.0);
        let mv = (sol.kappa[0] - kappa[0]).abs().max((sol.kappa[1] - kappa[1]).abs()) / kn;
        let done = (ll_new - ll).abs() <= 1e-12 * (1.0 + ll.abs()) && mv < 1e-8;
        kappa = sol.kappa;
        active = sol.active.clone();
        s = s_new;
        ll = ll_new;
        last = Some(sol);
        if done {
            break;
        }
    }
    let sol = last.expect("at least one reweighting round");
    let mut report = build_report(EstimatorKind::Sml, &design, &sol, ls.convergence.restarts, opts)?;
    report.objective = ll;
    report.convergence.iterations = iterations + ls.convergence.iterations;
    report.convergence.reweight_rounds = rounds;
    report.convergence.max_objective_increase = max_increase;
    report.convergence.boundary = boundary;
    if opts.compute_se {
        let sig = SigmaHat::constant(s, design.domain)?;
        report.attach_variance(variance_theta(&report, sample, Some(&sig)));
    }
    Ok(report)
}
