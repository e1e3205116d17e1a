use otsieve::dgp::{self, DgpConfig};
use otsieve::estimators::{sgls_fit, sgls_fit_with_sigma, sls_fit, sml_fit, FitOptions, SigmaHat};
use otsieve::gaussian::ml_fit;

fn sample(n: usize, seed: u64) -> otsieve::MatchedSample {
    dgp::draw_sample(&DgpConfig::gaussian(n, seed)).unwrap().1
}

#[test]
fn sieve_fits_land_near_the_truth() {
    let s = sample(1500, 31);
    let opts = FitOptions::default();
    for r in [sml_fit(&s, &opts).unwrap(), sls_fit(&s, &opts).unwrap(), sgls_fit(&s, &opts).unwrap()] {
        let p = r.alpha_params();
        let se = r.std_errors.expect("standard errors");
        // five standard errors either way
        for (k, (want, sd)) in [(0.5, se.alpha_cc), (0.2, se.alpha_mm), (1.7, se.beta_c), (-0.4, se.beta_m)]
            .into_iter()
            .enumerate()
        {
            assert!(sd > 0.0 && sd < 1.0, "{:?} se {sd}", r.estimator);
            assert!((p[k] - want).abs() < 5.0 * sd, "{:?} param {k}: {} vs {want} (se {sd})", r.estimator, p[k]);
        }
        assert!(r.convergence.converged);
        assert!(r.convergence.max_objective_increase <= 1e-8);
    }
}

#[test]
fn convexity_constraint_holds_on_returned_fits() {
    let s = sample(250, 32);
    let opts = FitOptions { convexity: true, k_c: 4, k_m: 4, compute_se: false, ..FitOptions::default() };
    for r in [sml_fit(&s, &opts).unwrap(), sls_fit(&s, &opts).unwrap(), sgls_fit(&s, &opts).unwrap()] {
        assert!(r.sieve.is_convex_feasible(1e-10), "{:?}: {}", r.estimator, r.sieve.min_convexity_slack());
    }
}

#[test]
fn constant_weighting_by_identity_is_least_squares() {
    let s = sample(300, 33);
    let opts = FitOptions { compute_se: false, ..FitOptions::default() };
    let ls = sls_fit(&s, &opts).unwrap();
    let domain = otsieve::sieve::Domain::from_data(&s.x).unwrap();
    let eye = nalgebra::Matrix3::identity();
    let gls = sgls_fit_with_sigma(&s, &opts, &SigmaHat::constant(eye, domain).unwrap()).unwrap();
    for (a, b) in ls.alpha_params().iter().zip(gls.alpha_params()) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn too_few_rows_is_an_input_error() {
    let s = sample(12, 34);
    let err = sls_fit(&s, &FitOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn ml_is_consistent_on_noiseless_gaussian_data() {
    let (_, s) = dgp::draw_sample(&DgpConfig::preset("gaussian-noiseless", 2000, 35).unwrap()).unwrap();
    let fit = ml_fit(&s, false).unwrap();
    let p = [fit.alpha_cc, fit.alpha_mm, fit.beta_c, fit.beta_m];
    for (g, want) in p.iter().zip([0.5, 0.2, 1.7, -0.4]) {
        assert!((g - want).abs() < 0.05, "{p:?}");
    }
}

#[test]
fn homoskedastic_errors_give_flat_covariance() {
    let s = sample(3000, 36);
    let opts = FitOptions { compute_se: false, ..FitOptions::default() };
    let ls = sls_fit(&s, &opts).unwrap();
    // the grid is the design's own support: sample points inside the central
    // 10-90% marginal band; corners of the bounding box hold no data
    let band = |k: usize| {
        let mut v: Vec<f64> = (0..s.len()).map(|i| s.x_row(i)[k]).collect();
        v.sort_by(f64::total_cmp);
        (v[v.len() / 10], v[9 * v.len() / 10])
    };
    let (bc, bm) = (band(0), band(1));
    let grid: Vec<[f64; 2]> = (0..s.len())
        .map(|i| s.x_row(i))
        .filter(|x| x[0] >= bc.0 && x[0] <= bc.1 && x[1] >= bm.0 && x[1] <= bm.1)
        .collect();
    // selected degrees, and the full degree of the main sieve
    for degrees in [None, Some((3, 3))] {
        let sig = otsieve::estimators::estimate_sigma0(&s, &ls, degrees).unwrap();
        let mats: Vec<nalgebra::Matrix3<f64>> = grid.iter().map(|x| sig.eval(*x).unwrap()).collect();
        let mean = mats.iter().fold(nalgebra::Matrix3::zeros(), |a, m| a + m) / mats.len() as f64;
        let worst = mats.iter().map(|m| (m - mean).norm() / mean.norm()).fold(0.0, f64::max);
        assert!(worst <= 0.2, "{degrees:?}: max relative deviation {worst}");
        // true covariance diag(4, 1, 1)
        assert!((mean[(0, 0)] - 4.0).abs() < 0.6 && (mean[(1, 1)] - 1.0).abs() < 0.2, "{mean}");
    }
}

#[test]
fn covariance_degree_follows_the_data() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let (_, clean) = dgp::draw_sample(&DgpConfig::preset("gaussian-noiseless", 3000, 38).unwrap()).unwrap();
    let opts = FitOptions { compute_se: false, ..FitOptions::default() };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(38);
    let z = Normal::new(0.0, 1.0).unwrap();
    // wage noise whose spread grows fourfold across the cognitive axis
    let mut hetero = clean.clone();
    let mut homo = clean.clone();
    for i in 0..clean.len() {
        let sd = 1.0 + 0.6 * (clean.x[(i, 0)] + 3.0).clamp(0.0, 6.0);
        hetero.wage[i] += sd * z.sample(&mut rng);
        homo.wage[i] += 2.0 * z.sample(&mut rng);
        for k in 0..2 {
            let e = z.sample(&mut rng);
            hetero.y[(i, k)] += e;
            homo.y[(i, k)] += e;
        }
    }
    let fit = |s: &otsieve::MatchedSample| {
        let ls = sls_fit(s, &opts).unwrap();
        otsieve::estimators::estimate_sigma0(s, &ls, None).unwrap()
    };
    let h = fit(&hetero);
    assert!(h.k_c >= 1, "heteroskedastic wage noise kept degree ({}, {})", h.k_c, h.k_m);
    let lo = h.eval([-2.0, 0.0]).unwrap()[(0, 0)];
    let hi = h.eval([2.0, 0.0]).unwrap()[(0, 0)];
    assert!(hi > 3.0 * lo, "{lo} vs {hi}");
    let c = fit(&homo);
    assert!(c.k_c + c.k_m <= 1, "homoskedastic noise picked degree ({}, {})", c.k_c, c.k_m);
    // explicit degrees are honoured
    let ls = sls_fit(&homo, &opts).unwrap();
    let forced = otsieve::estimators::estimate_sigma0(&homo, &ls, Some((2, 3))).unwrap();
    assert_eq!((forced.k_c, forced.k_m), (2, 3));
}

#[test]
fn wage_level_shift_leaves_technology_unchanged() {
    let s = sample(800, 37);
    let mut shifted = s.clone();
    for w in &mut shifted.wage {
        *w += 12.5;
    }
    let opts = FitOptions { compute_se: false, ..FitOptions::default() };
    for fit in [sls_fit, sgls_fit, sml_fit] {
        let a = fit(&s, &opts).unwrap();
        let b = fit(&shifted, &opts).unwrap();
        for (x, y) in a.alpha_params().iter().zip(b.alpha_params()) {
            assert!((x - y).abs() < 1e-7 * (1.0 + x.abs()), "{:?}: {x} vs {y}", a.estimator);
        }
        // the sieve absorbs the shift uniformly
        let p = [0.1, -0.2];
        let dv = b.sieve.value(p).unwrap() - a.sieve.value(p).unwrap();
        assert!((dv - 12.5).abs() < 1e-6, "{dv}");
    }
}

#[test]
fn residuals_move_linearly_in_kappa_and_carry_the_error_spread() {
    let s = sample(3000, 39);
    let opts = FitOptions { compute_se: false, ..FitOptions::default() };
    let fit = sls_fit(&s, &opts).unwrap();
    let rho = otsieve::estimators::residuals(&s, &fit.theta, &fit.sieve).unwrap();
    let sd = |k: usize| {
        let col: Vec<f64> = rho.column(k).iter().copied().collect();
        otsieve::stats::std_dev(&col)
    };
    for (k, want) in [2.0, 1.0, 1.0].into_iter().enumerate() {
        assert!((sd(k) - want).abs() <= 0.1 * want, "column {k}: sd {}", sd(k));
    }
    let mut moved = fit.theta;
    moved.kappa_c += 0.1;
    let rho2 = otsieve::estimators::residuals(&s, &moved, &fit.sieve).unwrap();
    for i in (0..s.len()).step_by(97) {
        let g = fit.sieve.gradient(s.x_row(i)).unwrap();
        assert!((rho2[(i, 1)] - rho[(i, 1)] + 0.1 * g[0]).abs() < 1e-9);
        assert_eq!(rho2[(i, 0)], rho[(i, 0)]);
        assert_eq!(rho2[(i, 2)], rho[(i, 2)]);
    }
}

#[test]
fn correlated_errors_show_in_the_covariance_fit() {
    let (_, s) = dgp::draw_sample(&DgpConfig::gumbel_joint(3000, 40)).unwrap();
    let opts = FitOptions { compute_se: false, ..FitOptions::default() };
    let ls = sls_fit(&s, &opts).unwrap();
    let sig = otsieve::estimators::estimate_sigma0(&s, &ls, None).unwrap();
    let mut wc = 0.0;
    for i in 0..s.len() {
        wc += sig.eval(s.x_row(i)).unwrap()[(0, 1)];
    }
    wc /= s.len() as f64;
    // error covariance has (w, C) entry 1
    assert!((wc - 1.0).abs() < 0.2, "(w,C) entry {wc}");
}

#[test]
fn efficient_weighting_makes_the_sandwich_collapse() {
    let s = sample(3000, 41);
    let opts = FitOptions { compute_se: false, ..FitOptions::default() };
    let ls = sls_fit(&s, &opts).unwrap();
    let sig = otsieve::estimators::estimate_sigma0(&s, &ls, None).unwrap();
    let gls = sgls_fit_with_sigma(&s, &opts, &sig).unwrap();
    let v = otsieve::estimators::variance_theta(&gls, &s, Some(&sig)).unwrap();
    let inv = v.v1.clone().cholesky().unwrap().inverse();
    let sandwich = &inv * &v.v2 * &inv;
    // the technology block, which is what gets reported
    let a = sandwich.view((0, 0), (4, 4)).clone_owned();
    let b = inv.view((0, 0), (4, 4)).clone_owned();
    let gap = (&a - &b).norm() / b.norm();
    assert!(gap <= 0.1, "relative Frobenius gap {gap}");
}
