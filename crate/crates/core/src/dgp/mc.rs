//! Monte-Carlo harness and technology sweeps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{draw_sample, DgpConfig, Family, TechParams};
use crate::diagnostics::gaussianize_sample;
use crate::error::{Error, Result};
use crate::estimators::{sgls_fit, sls_fit, sml_fit, EstimateReport, FitOptions};
use crate::gaussian::ml_fit;
use crate::sample::MatchedSample;
use crate::stats;

/// Largest tolerated share of failed replications per estimator.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

pub const PARAMETER_NAMES: [&str; 4] = ["alpha_CC", "alpha_MM", "beta_C", "beta_M"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum McEstimator {
    #[serde(rename = "ML")]
    Ml,
    #[serde(rename = "ML*")]
    MlStar,
    #[serde(rename = "SML")]
    Sml,
    #[serde(rename = "SLS")]
    Sls,
    #[serde(rename = "SGLS")]
    Sgls,
}

impl McEstimator {
    pub const ALL: [McEstimator; 5] = [
        McEstimator::Ml,
        McEstimator::MlStar,
        McEstimator::Sml,
        McEstimator::Sls,
        McEstimator::Sgls,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            McEstimator::Ml => "ML",
            McEstimator::MlStar => "ML*",
            McEstimator::Sml => "SML",
            McEstimator::Sls => "SLS",
            McEstimator::Sgls => "SGLS",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        let up = if up == "MLSTAR" || up == "ML_STAR" { "ML*".to_string() } else { up };
        Self::ALL
            .into_iter()
            .find(|e| e.name() == up)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}'")))
    }

    pub fn is_sieve(&self) -> bool {
        matches!(self, McEstimator::Sml | McEstimator::Sls | McEstimator::Sgls)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub estimators: Vec<McEstimator>,
    pub reps: usize,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
    pub fit: FitOptions,
    /// Rank-Gaussianise skills and requirements before the parametric fits.
    /// Defaults to on for designs whose margins are not normal.
    pub gaussianize_parametric: Option<bool>,
}

impl McOptions {
    pub fn new(reps: usize) -> Self {
        Self {
            estimators: McEstimator::ALL.to_vec(),
            reps,
            threads: 0,
            fit: FitOptions {
                compute_se: false,
                ..FitOptions::default()
            },
            gaussianize_parametric: None,
        }
    }
}

/// One replication; vectors are indexed like `McResult::estimators`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepEstimate {
    pub rep: usize,
    pub seed: u64,
    /// `(alpha_CC, alpha_MM, beta_C, beta_M)` or `None` on failure.
    pub estimates: Vec<Option<[f64; 4]>>,
    /// Delta-method standard errors when available.
    pub std_errors: Vec<Option<[f64; 4]>>,
    pub failures: Vec<Option<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub estimator: McEstimator,
    pub used: usize,
    pub failures: usize,
    pub bias: [f64; 4],
    pub rmse: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub config: DgpConfig,
    pub reps: usize,
    pub truth: [f64; 4],
    pub estimators: Vec<McEstimator>,
    pub summaries: Vec<McSummary>,
    pub replications: Vec<RepEstimate>,
}

fn fit_one(
    est: McEstimator,
    sample: &MatchedSample,
    parametric_input: &MatchedSample,
    fit: &FitOptions,
) -> Result<([f64; 4], Option<[f64; 4]>)> {
    let sieve = |r: EstimateReport| {
        let se = r
            .std_errors
            .map(|s| [s.alpha_cc, s.alpha_mm, s.beta_c, s.beta_m]);
        (r.alpha_params(), se)
    };
    match est {
        McEstimator::Ml | McEstimator::MlStar => {
            let m = ml_fit(parametric_input, est == McEstimator::MlStar)?;
            Ok(([m.alpha_cc, m.alpha_mm, m.beta_c, m.beta_m], None))
        }
        McEstimator::Sml => sml_fit(sample, fit).map(sieve),
        McEstimator::Sls => sls_fit(sample, fit).map(sieve),
        McEstimator::Sgls => sgls_fit(sample, fit).map(sieve),
    }
}

fn run_rep(cfg: &DgpConfig, opts: &McOptions, gaussianize: bool, rep: usize) -> RepEstimate {
    let seed = cfg.seed.wrapping_add(rep as u64);
    let k = opts.estimators.len();
    let mut out = RepEstimate {
        rep,
        seed,
        estimates: vec![None; k],
        std_errors: vec![None; k],
        failures: vec![None; k],
    };
    let sample = match draw_sample(&cfg.with_seed(seed)) {
        Ok((_, s)) => s,
        Err(e) => {
            out.failures = vec![Some(format!("draw: {e}")); k];
            return out;
        }
    };
    let needs_parametric = opts.estimators.iter().any(|e| !e.is_sieve());
    let parametric = if gaussianize && needs_parametric {
        gaussianize_sample(&sample)
    } else {
        Ok(sample.clone())
    };
    for (slot, est) in opts.estimators.iter().enumerate() {
        let res = match (&parametric, est.is_sieve()) {
            (Err(e), false) => Err(Error::Numerical(format!("rank transform: {e}"))),
            (Ok(p), _) => fit_one(*est, &sample, p, &opts.fit),
            (Err(_), true) => fit_one(*est, &sample, &sample, &opts.fit),
        };
        match res {
            Ok((theta, se)) if theta.iter().all(|v| v.is_finite()) => {
                out.estimates[slot] = Some(theta);
                out.std_errors[slot] = se;
            }
            Ok(_) => out.failures[slot] = Some("non-finite estimate".into()),
            Err(e) => out.failures[slot] = Some(format!("{}: {e}", e.kind_name())),
        }
    }
    out
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Bias and RMSE of the retained replications against `truth`.
pub fn summarize(estimators: &[McEstimator], truth: [f64; 4], reps: &[RepEstimate]) -> Vec<McSummary> {
    estimators
        .iter()
        .enumerate()
        .map(|(slot, est)| {
            let kept: Vec<[f64; 4]> = reps.iter().filter_map(|r| r.estimates[slot]).collect();
            let used = kept.len();
            let mut bias = [f64::NAN; 4];
            let mut rmse = [f64::NAN; 4];
            if used > 0 {
                for p in 0..4 {
                    let errs: Vec<f64> = kept.iter().map(|t| t[p] - truth[p]).collect();
                    bias[p] = stats::mean(&errs);
                    rmse[p] = (errs.iter().map(|e| e * e).sum::<f64>() / used as f64).sqrt();
                }
            }
            McSummary {
                estimator: *est,
                used,
                failures: reps.len() - used,
                bias,
                rmse,
            }
        })
        .collect()
}

/// Replication `r` is drawn with seed `cfg.seed + r`; results are reduced in
/// replication order, so the output does not depend on `threads`.
pub fn run_monte_carlo(cfg: &DgpConfig, opts: &McOptions) -> Result<McResult> {
    if opts.reps == 0 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    if opts.estimators.is_empty() {
        return Err(Error::Config("no estimators selected".into()));
    }
    cfg.validate()?;
    let gaussianize = opts
        .gaussianize_parametric
        .unwrap_or_else(|| cfg.non_normal_margins());
    let replications: Vec<RepEstimate> = with_pool(opts.threads, || {
        (0..opts.reps)
            .into_par_iter()
            .map(|r| run_rep(cfg, opts, gaussianize, r))
            .collect()
    })?;
    let truth = cfg.tech.as_array();
    let summaries = summarize(&opts.estimators, truth, &replications);
    for s in &summaries {
        if s.failures as f64 > MAX_FAILURE_SHARE * opts.reps as f64 {
            let first = replications
                .iter()
                .find_map(|r| {
                    let slot = opts.estimators.iter().position(|e| e == &s.estimator)?;
                    r.failures[slot].clone()
                })
                .unwrap_or_default();
            return Err(Error::Numerical(format!(
                "{} failed in {} of {} replications (first: {first})",
                s.estimator.name(),
                s.failures,
                opts.reps
            )));
        }
    }
    Ok(McResult {
        config: cfg.clone(),
        reps: opts.reps,
        truth,
        estimators: opts.estimators.clone(),
        summaries,
        replications,
    })
}

impl McResult {
    pub fn summary(&self, est: McEstimator) -> Option<&McSummary> {
        self.summaries.iter().find(|s| s.estimator == est)
    }

    /// Rows `parameter x {Bias, RMSE}`, one column per estimator, plus a
    /// trailing failure-count row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["parameter".to_string(), "stat".to_string()];
        header.extend(self.summaries.iter().map(|s| s.estimator.name().to_string()));
        wtr.write_record(&header)?;
        for (p, name) in PARAMETER_NAMES.iter().enumerate() {
            for (stat, pick) in [("Bias", 0), ("RMSE", 1)] {
                let mut row = vec![name.to_string(), stat.to_string()];
                for s in &self.summaries {
                    let v = if pick == 0 { s.bias[p] } else { s.rmse[p] };
                    row.push(format!("{v:.4}"));
                }
                wtr.write_record(&row)?;
            }
        }
        let mut row = vec!["failures".to_string(), "count".to_string()];
        row.extend(self.summaries.iter().map(|s| s.failures.to_string()));
        wtr.write_record(&row)?;
        wtr.flush()?;
        Ok(())
    }

    /// Long format: `rep,seed,estimator,alpha_CC,...,se_alpha_CC,...,failure`.
    pub fn write_replications_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["rep".to_string(), "seed".to_string(), "estimator".to_string()];
        header.extend(PARAMETER_NAMES.iter().map(|s| s.to_string()));
        header.extend(PARAMETER_NAMES.iter().map(|s| format!("se_{s}")));
        header.push("failure".into());
        wtr.write_record(&header)?;
        let fmt = |v: Option<[f64; 4]>, p: usize| v.map(|t| format!("{}", t[p])).unwrap_or_default();
        for r in &self.replications {
            for (slot, est) in self.estimators.iter().enumerate() {
                let mut row = vec![r.rep.to_string(), r.seed.to_string(), est.name().to_string()];
                row.extend((0..4).map(|p| fmt(r.estimates[slot], p)));
                row.extend((0..4).map(|p| fmt(r.std_errors[slot], p)));
                row.push(r.failures[slot].clone().unwrap_or_default());
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha_cc: f64,
    pub alpha_mm: f64,
    pub skewness: f64,
    pub variance: f64,
}

/// Wage skewness and variance over a grid of complementarities. Every grid
/// point reuses the same skill and requirement draws (`cfg.seed`).
pub fn technology_sweep(cfg: &DgpConfig, grid: &[(f64, f64)], threads: usize) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let rows: Vec<Result<SweepRow>> = with_pool(threads, || {
        grid.par_iter()
            .map(|&(acc, amm)| {
                let point = DgpConfig {
                    tech: TechParams {
                        alpha_cc: acc,
                        alpha_mm: amm,
                        ..cfg.tech
                    },
                    ..cfg.clone()
                };
                let mut rng = point.rng();
                let eq = super::draw_equilibrium(&point, &mut rng)?;
                Ok(SweepRow {
                    alpha_cc: acc,
                    alpha_mm: amm,
                    skewness: stats::skewness(&eq.w_star),
                    variance: stats::variance(&eq.w_star),
                })
            })
            .collect()
    })?;
    rows.into_iter().collect()
}

/// `alpha` values from `lo` to `hi` inclusive in `steps` equal steps, crossed.
pub fn sweep_grid(lo: f64, hi: f64, steps: usize) -> Vec<(f64, f64)> {
    let pts: Vec<f64> = if steps == 0 {
        vec![lo]
    } else {
        (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64).collect()
    };
    let mut out = Vec::with_capacity(pts.len() * pts.len());
    for &a in &pts {
        for &b in &pts {
            out.push((a, b));
        }
    }
    out
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["alpha_CC", "alpha_MM", "skewness", "variance"])?;
    for r in rows {
        wtr.write_record([
            r.alpha_cc.to_string(),
            r.alpha_mm.to_string(),
            r.skewness.to_string(),
            r.variance.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Whether the parametric Gaussian model's closed form applies to the design.
pub fn is_closed_form(cfg: &DgpConfig) -> bool {
    matches!(cfg.family, Family::Gaussian { .. })
}
