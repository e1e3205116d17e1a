use otsieve::dgp::{self, technology_sweep, DgpConfig};
use otsieve::diagnostics::{decompose_counterfactual, polarization_curve, Counterfactual, CurveMode};
use otsieve::estimators::{sls_fit, FitOptions};

#[test]
fn faster_growth_in_both_tails_gives_a_u_shape() {
    let n = 2000;
    let w0: Vec<f64> = (0..n).map(|i| (1.0 + 2.0 * (i as f64 + 0.5) / n as f64).exp()).collect();
    // growth rises with distance from the median rank
    let w1: Vec<f64> = w0
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let r = (i as f64 + 0.5) / n as f64 - 0.5;
            w * (0.8 * r * r).exp()
        })
        .collect();
    let c = polarization_curve(&w0, &w1, CurveMode::Log).unwrap();
    assert_eq!(c.at(50), Some(0.0));
    assert!(c.at(10).unwrap() > 0.05 && c.at(90).unwrap() > 0.05, "{:?} {:?}", c.at(10), c.at(90));
    assert!(c.at(30).unwrap() < c.at(10).unwrap() && c.at(70).unwrap() < c.at(90).unwrap());
}

fn fitted(n: usize, seed: u64) -> (otsieve::MatchedSample, otsieve::estimators::EstimateReport) {
    let (_, s) = dgp::draw_sample(&DgpConfig::gaussian(n, seed)).unwrap();
    let opts = FitOptions { compute_se: false, ..FitOptions::default() };
    let r = sls_fit(&s, &opts).unwrap();
    (s, r)
}

#[test]
fn nothing_changes_gives_a_flat_decomposition() {
    let (s, r) = fitted(400, 51);
    for mode in [Counterfactual::TaskBiasedOnly, Counterfactual::SkillBiasedOnly, Counterfactual::DistributionOnly] {
        let c = decompose_counterfactual(&r, &r, &s, &s, mode, CurveMode::Level).unwrap();
        assert!(c.values.iter().all(|v| v.abs() < 1e-9), "{mode:?}");
    }
}

#[test]
fn stronger_cognitive_complementarity_lifts_the_upper_tail() {
    let (s, r0) = fitted(600, 52);
    let mut r1 = r0.clone();
    // complementarity moves from the fitted value to 2.0
    r1.theta.kappa_c = 0.5;
    let c = decompose_counterfactual(&r0, &r1, &s, &s, Counterfactual::TaskBiasedOnly, CurveMode::Level).unwrap();
    let spread = c.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(spread > 0.1, "curve is flat ({spread})");
    assert!(c.at(90).unwrap() > 0.0 && c.at(90).unwrap() > c.at(75).unwrap());
    // linear productivities alone did not move
    let skill = decompose_counterfactual(&r0, &r1, &s, &s, Counterfactual::SkillBiasedOnly, CurveMode::Level).unwrap();
    assert!(skill.values.iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn wage_variance_rises_with_cognitive_complementarity() {
    let cfg = DgpConfig::gaussian(2000, 53);
    let grid: Vec<(f64, f64)> = [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|&a| (a, 0.2)).collect();
    let rows = technology_sweep(&cfg, &grid, 1).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].variance > w[0].variance, "{:?} -> {:?}", w[0], w[1]);
    }
}
