use otsieve::dgp::{
    self, copula, draw_errors, run_monte_carlo, sweep_grid, technology_sweep, DgpConfig, ErrorFamily, McEstimator,
    McOptions, PRESET_NAMES,
};
use otsieve::stats;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_preset_validates_and_draws() {
    for name in PRESET_NAMES {
        let cfg = DgpConfig::preset(name, 60, 3).unwrap();
        let (eq, s) = dgp::draw_sample(&cfg).unwrap();
        assert_eq!(s.len(), 60, "{name}");
        assert_eq!(eq.w_star.len(), 60);
        assert!(s.wage.iter().all(|w| w.is_finite()));
    }
    assert!(DgpConfig::preset("table9", 10, 1).is_err());
}

#[test]
fn same_seed_same_sample() {
    let cfg = DgpConfig::mixture(150, 77);
    let (_, a) = dgp::draw_sample(&cfg).unwrap();
    let (_, b) = dgp::draw_sample(&cfg).unwrap();
    assert_eq!(a, b);
    let (_, c) = dgp::draw_sample(&cfg.with_seed(78)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn closed_form_wages_have_population_mean() {
    let cfg = DgpConfig::preset("gaussian-noiseless", 4000, 5).unwrap();
    let (eq, s) = dgp::draw_sample(&cfg).unwrap();
    assert_eq!(eq.w_star, s.wage);
    // E w = c + tr(H Sigma_x) / 2 for the quadratic closed form
    let j = dgp::gaussian_assignment(&cfg).unwrap();
    let h = otsieve::gaussian::wage_hessian(&cfg.tech.to_tech().unwrap(), &j).unwrap();
    let sigma_x = nalgebra::Matrix2::new(1.0, -0.4, -0.4, 1.0);
    let want = cfg.wage_constant + 0.5 * (h * sigma_x).trace();
    let se = stats::std_dev(&s.wage) / (s.len() as f64).sqrt();
    assert!((stats::mean(&s.wage) - want).abs() < 4.0 * se);
}

#[test]
fn gumbel_draws_match_kendall_tau() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for theta in [1.25, 2.5] {
        let pairs: Vec<[f64; 2]> = (0..3000).map(|_| copula::gumbel_pair(theta, &mut rng)).collect();
        let a: Vec<f64> = pairs.iter().map(|p| p[0]).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p[1]).collect();
        let tau = stats::kendall_tau(&a, &b);
        let want = copula::gumbel_kendall_tau(theta);
        assert!((tau - want).abs() < 0.03, "theta {theta}: tau {tau} vs {want}");
        // uniform margins
        assert!((stats::mean(&a) - 0.5).abs() < 0.02);
        assert!((stats::variance(&b) - 1.0 / 12.0).abs() < 0.006);
    }
}

#[test]
fn error_families_are_centred_with_target_spread() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 40_000;
    let gamma = ErrorFamily::GammaIid { shape: 1.0, scale: 2.0, sd: [2.0, 1.0, 1.0] };
    let e = draw_errors(&gamma, n, &mut rng).unwrap();
    for (k, sd) in [2.0, 1.0, 1.0].into_iter().enumerate() {
        let col: Vec<f64> = e.column(k).iter().copied().collect();
        assert!(stats::mean(&col).abs() < 0.05 * sd);
        assert!((stats::std_dev(&col) - sd).abs() < 0.05 * sd);
        // exponential shape: skewness 2
        assert!((stats::skewness(&col) - 2.0).abs() < 0.25);
    }
    let joint = DgpConfig::gumbel_joint(10, 0).errors;
    let e = draw_errors(&joint, n, &mut rng).unwrap();
    let c0: Vec<f64> = e.column(0).iter().copied().collect();
    let c1: Vec<f64> = e.column(1).iter().copied().collect();
    // cov 1 with variances 2 and 1
    assert!((stats::correlation(&c0, &c1) - 1.0 / 2f64.sqrt()).abs() < 0.02);
    let mix = DgpConfig::mixture(10, 0).errors;
    let e = draw_errors(&mix, n, &mut rng).unwrap();
    let c0: Vec<f64> = e.column(0).iter().copied().collect();
    assert!(stats::mean(&c0).abs() < 0.06);
    // mixture of N(1,1) and N(-3,1) at 3:1 has variance 1 + 3 = 4
    assert!((stats::variance(&c0) - 4.0).abs() < 0.15);
}

#[test]
fn lp_equilibrium_tracks_closed_form_assignment() {
    let cfg = DgpConfig::gaussian(300, 21);
    let j = dgp::gaussian_assignment(&cfg).unwrap();
    assert!((j[(0, 0)] - 0.98552314).abs() < 1e-7);
    assert!((j[(1, 1)] - 0.96188336).abs() < 1e-7);
    let mut rng = cfg.rng();
    let (x, y) = dgp::draw_clouds(&cfg, &mut rng).unwrap();
    let eq = dgp::solve_equilibrium(x.clone(), &y, &cfg.tech.to_tech().unwrap(), 30.0).unwrap();
    assert!((stats::mean(&eq.w_star) - 30.0).abs() < 1e-9);
    let jx: Vec<f64> = (0..300).map(|i| j[(0, 0)] * x[(i, 0)] + j[(0, 1)] * x[(i, 1)]).collect();
    let yc: Vec<f64> = eq.y_star.column(0).iter().copied().collect();
    assert!(stats::correlation(&jx, &yc) > 0.95);
}

fn small_mc(threads: usize) -> otsieve::dgp::McResult {
    let mut opts = McOptions::new(4);
    opts.estimators = vec![McEstimator::Ml, McEstimator::Sls];
    opts.threads = threads;
    run_monte_carlo(&DgpConfig::gaussian(120, 500), &opts).unwrap()
}

#[test]
fn monte_carlo_is_thread_count_independent() {
    let a = small_mc(1);
    let b = small_mc(2);
    assert_eq!(a.replications, b.replications);
    assert_eq!(a.summaries, b.summaries);
    let seeds: Vec<u64> = a.replications.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![500, 501, 502, 503]);
}

#[test]
fn single_replication_has_zero_spread_around_its_error() {
    let mut opts = McOptions::new(1);
    opts.estimators = vec![McEstimator::Sls];
    let r = run_monte_carlo(&DgpConfig::gaussian(120, 8), &opts).unwrap();
    let s = r.summary(McEstimator::Sls).unwrap();
    assert_eq!(s.used, 1);
    for k in 0..4 {
        assert!((s.rmse[k] - s.bias[k].abs()).abs() < 1e-12);
    }
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("parameter,stat,SLS"));
    assert!(text.lines().any(|l| l.starts_with("failures")));
}

#[test]
fn zero_replications_rejected() {
    let opts = McOptions::new(0);
    assert!(run_monte_carlo(&DgpConfig::gaussian(50, 1), &opts).is_err());
}

#[test]
fn sweep_skewness_is_symmetric_on_the_diagonal() {
    let cfg = DgpConfig::sweep_gaussian(800, 4);
    let grid = sweep_grid(0.5, 1.5, 2);
    assert_eq!(grid.len(), 9);
    let rows = technology_sweep(&cfg, &grid, 1).unwrap();
    let diag: Vec<f64> = rows.iter().filter(|r| r.alpha_cc == r.alpha_mm).map(|r| r.skewness).collect();
    // equal complementarities only rescale the quadratic form
    for s in &diag {
        assert!((s - diag[0]).abs() < 1e-9, "{diag:?}");
    }
    assert!(rows.iter().all(|r| r.variance > 0.0));
}
