//! Rank Gaussianisation, Mardia's normality test, wage-polarization curves
//! and counterfactual decompositions.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimators::EstimateReport;
use crate::ot::{self, DualNormalization, ProductionTech};
use crate::sample::MatchedSample;
use crate::stats;

/// `Phi^-1(rank / (n + 1))` with average ranks for ties.
pub fn gaussian_rank_transform(column: &[f64]) -> Result<Vec<f64>> {
    let n = column.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("rank transform needs n >= 2, got {n}")));
    }
    if column.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rank transform input".into()));
    }
    let first = column[0];
    if column.iter().all(|v| *v == first) {
        return Err(Error::Domain("rank transform of a constant column is undefined".into()));
    }
    let denom = (n + 1) as f64;
    Ok(stats::average_ranks(column)
        .into_iter()
        .map(|r| stats::normal_quantile(r / denom))
        .collect())
}

/// Rank-Gaussianises each skill and requirement column; wages are untouched.
pub fn gaussianize_sample(sample: &MatchedSample) -> Result<MatchedSample> {
    let n = sample.len();
    let mut x = DMatrix::zeros(n, 2);
    let mut y = DMatrix::zeros(n, 2);
    for k in 0..2 {
        let tx = gaussian_rank_transform(&sample.column(1 + k))?;
        let ty = gaussian_rank_transform(&sample.column(3 + k))?;
        for i in 0..n {
            x[(i, k)] = tx[i];
            y[(i, k)] = ty[i];
        }
    }
    MatchedSample::new(sample.wage.clone(), x, y)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MardiaResult {
    pub n: usize,
    pub d: usize,
    pub b1: f64,
    pub b2: f64,
    /// `n b1 / 6`, chi-square under normality.
    pub skew_stat: f64,
    pub skew_df: f64,
    pub skew_p: f64,
    /// `sqrt(n) (b2 - d(d+2)) / sqrt(8 d (d+2))`, standard normal under normality.
    pub kurt_stat: f64,
    /// Two-sided.
    pub kurt_p: f64,
}

/// Mardia's multivariate skewness and kurtosis, covariance with divisor n.
pub fn mardia_test(data: &DMatrix<f64>) -> Result<MardiaResult> {
    let (n, d) = data.shape();
    if d == 0 || n <= d {
        return Err(Error::InvalidInput(format!(
            "Mardia test needs more rows than columns, got {n} x {d}"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Mardia test input".into()));
    }
    let mut centered = data.clone();
    for j in 0..d {
        let m = centered.column(j).mean();
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let s = centered.transpose() * &centered / n as f64;
    let eig = s.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if !(min_eig > 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular {
            what: "Mardia sample covariance".into(),
            smallest_eigenvalue: min_eig,
        });
    }
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Singular {
            what: "Mardia sample covariance".into(),
            smallest_eigenvalue: min_eig,
        })?;
    let c = &centered * s_inv * centered.transpose();
    let nf = n as f64;
    let b1 = c.iter().map(|v| v * v * v).sum::<f64>() / (nf * nf);
    let b2 = (0..n).map(|i| c[(i, i)] * c[(i, i)]).sum::<f64>() / nf;
    let df_f = d as f64;
    let skew_df = df_f * (df_f + 1.0) * (df_f + 2.0) / 6.0;
    let skew_stat = nf * b1 / 6.0;
    let chi = ChiSquared::new(skew_df).map_err(|e| Error::Numerical(e.to_string()))?;
    let skew_p = chi.sf(skew_stat).clamp(0.0, 1.0);
    let target = df_f * (df_f + 2.0);
    let kurt_stat = nf.sqrt() * (b2 - target) / (8.0 * target).sqrt();
    let kurt_p = (2.0 * (1.0 - stats::normal_cdf(kurt_stat.abs()))).clamp(0.0, 1.0);
    Ok(MardiaResult {
        n,
        d,
        b1: b1.max(0.0),
        b2,
        skew_stat: skew_stat.max(0.0),
        skew_df,
        skew_p,
        kurt_stat,
        kurt_p,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveMode {
    /// Differences of log-wage quantiles; wages must be positive.
    #[default]
    Log,
    /// Differences of wage-level quantiles.
    Level,
}

impl CurveMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "log" => Ok(Self::Log),
            "level" => Ok(Self::Level),
            other => Err(Error::Config(format!("unknown curve mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarizationCurve {
    pub label: String,
    pub mode: CurveMode,
    /// 1..=99.
    pub percentiles: Vec<u32>,
    pub values: Vec<f64>,
}

impl PolarizationCurve {
    pub fn at(&self, percentile: u32) -> Option<f64> {
        self.percentiles
            .iter()
            .position(|p| *p == percentile)
            .map(|i| self.values[i])
    }
}

/// Growth at each percentile relative to growth at the median, type-7 quantiles.
pub fn polarization_curve(wages_t0: &[f64], wages_t1: &[f64], mode: CurveMode) -> Result<PolarizationCurve> {
    for (name, w) in [("t0", wages_t0), ("t1", wages_t1)] {
        if w.is_empty() {
            return Err(Error::InvalidInput(format!("{name} wages are empty")));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{name} wages")));
        }
        if mode == CurveMode::Log && w.iter().any(|v| *v <= 0.0) {
            return Err(Error::Domain(format!(
                "{name} wages contain nonpositive values; use level mode"
            )));
        }
    }
    let prep = |w: &[f64]| -> Vec<f64> {
        match mode {
            CurveMode::Log => stats::sorted_copy(&w.iter().map(|v| v.ln()).collect::<Vec<_>>()),
            CurveMode::Level => stats::sorted_copy(w),
        }
    };
    let s0 = prep(wages_t0);
    let s1 = prep(wages_t1);
    let growth = |p: f64| stats::quantile_sorted(&s1, p) - stats::quantile_sorted(&s0, p);
    let median = growth(0.5);
    let percentiles: Vec<u32> = (1..=99).collect();
    let values = percentiles
        .iter()
        .map(|&p| if p == 50 { 0.0 } else { growth(p as f64 / 100.0) - median })
        .collect();
    Ok(PolarizationCurve {
        label: "actual".into(),
        mode,
        percentiles,
        values,
    })
}

/// Writes curves side by side: `percentile,<label1>,<label2>,...`.
pub fn write_curves_csv<W: Write>(curves: &[PolarizationCurve], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["percentile".to_string()];
    header.extend(curves.iter().map(|c| c.label.clone()));
    wtr.write_record(&header)?;
    if let Some(first) = curves.first() {
        for (i, p) in first.percentiles.iter().enumerate() {
            let mut row = vec![p.to_string()];
            for c in curves {
                row.push(format!("{}", c.values[i]));
            }
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Counterfactual {
    /// Complementarities move to the later period; linear productivities stay.
    TaskBiasedOnly,
    /// Linear productivities move; complementarities stay.
    SkillBiasedOnly,
    /// Technology stays; only the skill and requirement distributions move.
    DistributionOnly,
}

impl Counterfactual {
    pub const ALL: [Counterfactual; 3] = [
        Counterfactual::TaskBiasedOnly,
        Counterfactual::SkillBiasedOnly,
        Counterfactual::DistributionOnly,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Counterfactual::TaskBiasedOnly => "task_biased_only",
            Counterfactual::SkillBiasedOnly => "skill_biased_only",
            Counterfactual::DistributionOnly => "distribution_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown counterfactual mode '{s}'")))
    }
}

fn tech_of(params: [f64; 4]) -> Result<ProductionTech> {
    ProductionTech::diagonal(params[0], params[1], params[2], params[3])
}

/// Equilibrium wages of `sample`'s skill and requirement clouds under `tech`,
/// centred on the sample's mean observed wage.
pub fn model_wages(sample: &MatchedSample, tech: &ProductionTech) -> Result<Vec<f64>> {
    let s = ot::build_surplus_matrix(&sample.x, &sample.y, tech)?;
    let coupling = ot::solve_assignment(&s)?;
    let duals = ot::wages_from_dual(&coupling, DualNormalization::ZeroMean)?;
    let location = stats::mean(&sample.wage);
    Ok(duals.into_iter().map(|w| w + location).collect())
}

fn check_reports(a: &EstimateReport, b: &EstimateReport) -> Result<()> {
    if a.sieve.k_c != b.sieve.k_c || a.sieve.k_m != b.sieve.k_m {
        return Err(Error::dimension(
            "sieve degrees of the two reports",
            format!("({}, {})", a.sieve.k_c, a.sieve.k_m),
            format!("({}, {})", b.sieve.k_c, b.sieve.k_m),
        ));
    }
    Ok(())
}

/// Counterfactual curve against the period-0 model baseline.
///
/// Both periods are re-solved by exact assignment. Wages are dual potentials
/// centred on the corresponding sample's mean observed wage; under
/// `DistributionOnly` the later period is centred on the earlier mean so the
/// level shift of wages does not leak in.
pub fn decompose_counterfactual(
    report_t0: &EstimateReport,
    report_t1: &EstimateReport,
    sample_t0: &MatchedSample,
    sample_t1: &MatchedSample,
    mode: Counterfactual,
    curve_mode: CurveMode,
) -> Result<PolarizationCurve> {
    check_reports(report_t0, report_t1)?;
    let p0 = report_t0.alpha_params();
    let p1 = report_t1.alpha_params();
    let cf = match mode {
        Counterfactual::TaskBiasedOnly => [p1[0], p1[1], p0[2], p0[3]],
        Counterfactual::SkillBiasedOnly => [p0[0], p0[1], p1[2], p1[3]],
        Counterfactual::DistributionOnly => p0,
    };
    let base = model_wages(sample_t0, &tech_of(p0)?)?;
    let mut counter = model_wages(sample_t1, &tech_of(cf)?)?;
    let shift = stats::mean(&sample_t0.wage) - stats::mean(&sample_t1.wage);
    for w in &mut counter {
        *w += shift;
    }
    let mut curve = polarization_curve(&base, &counter, curve_mode)?;
    curve.label = mode.name().into();
    Ok(curve)
}

/// Curve of the fully updated model (all parameters and distributions at t1).
pub fn model_curve(
    report_t0: &EstimateReport,
    report_t1: &EstimateReport,
    sample_t0: &MatchedSample,
    sample_t1: &MatchedSample,
    curve_mode: CurveMode,
) -> Result<PolarizationCurve> {
    check_reports(report_t0, report_t1)?;
    let base = model_wages(sample_t0, &tech_of(report_t0.alpha_params())?)?;
    let full = model_wages(sample_t1, &tech_of(report_t1.alpha_params())?)?;
    let mut curve = polarization_curve(&base, &full, curve_mode)?;
    curve.label = "model".into();
    Ok(curve)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub mean: f64,
    /// n - 1 divisor.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub columns: Vec<ColumnSummary>,
    pub rho_x: f64,
    pub rho_y: f64,
}

pub fn summary_stats(sample: &MatchedSample) -> SummaryStats {
    let columns = crate::sample::COLUMNS
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let col = sample.column(k);
            ColumnSummary {
                name: (*name).into(),
                mean: stats::mean(&col),
                sd: stats::std_dev(&col),
                min: col.iter().copied().fold(f64::INFINITY, f64::min),
                max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    SummaryStats {
        n: sample.len(),
        columns,
        rho_x: stats::correlation(&sample.column(1), &sample.column(2)),
        rho_y: stats::correlation(&sample.column(3), &sample.column(4)),
    }
}

impl SummaryStats {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["column", "mean", "sd", "min", "max"])?;
        for c in &self.columns {
            wtr.write_record([
                c.name.clone(),
                c.mean.to_string(),
                c.sd.to_string(),
                c.min.to_string(),
                c.max.to_string(),
            ])?;
        }
        wtr.write_record(["rho_x".to_string(), self.rho_x.to_string(), String::new(), String::new(), String::new()])?;
        wtr.write_record(["rho_y".to_string(), self.rho_y.to_string(), String::new(), String::new(), String::new()])?;
        wtr.flush()?;
        Ok(())
    }
}

impl MardiaResult {
    /// One row per statistic, p-values to four decimals.
    pub fn write_csv<W: Write>(&self, label: &str, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["variable", "statistic", "value", "p_value"])?;
        wtr.write_record([label.to_string(), "skewness".into(), self.skew_stat.to_string(), format!("{:.4}", self.skew_p)])?;
        wtr.write_record([label.to_string(), "kurtosis".into(), self.kurt_stat.to_string(), format!("{:.4}", self.kurt_p)])?;
        wtr.flush()?;
        Ok(())
    }
}
