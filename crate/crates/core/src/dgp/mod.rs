//! Simulation designs: skill distributions, equilibrium construction,
//! measurement errors, the Monte-Carlo harness and technology sweeps.

pub mod copula;
mod mc;

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{closed_form_wage, GaussianEquilibrium};
use crate::ot::{self, Coupling, DualNormalization, ProductionTech};
use crate::sample::MatchedSample;
use crate::stats;

pub use mc::{
    is_closed_form, run_monte_carlo, summarize, sweep_grid, technology_sweep, write_sweep_csv,
    McEstimator, McOptions, McResult, McSummary, RepEstimate, SweepRow, MAX_FAILURE_SHARE,
    PARAMETER_NAMES,
};

/// Wage location shared by every design.
pub const DEFAULT_WAGE_CONSTANT: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// Standard bivariate normal clouds, closed-form equilibrium.
    Gaussian { rho_x: f64, rho_y: f64 },
    /// Gumbel copula pushed to normal margins, second coordinate reflected.
    GumbelTransformed { theta_x: f64, theta_y: f64 },
    /// Gumbel copula on uniform margins, second coordinate reflected.
    GumbelRaw { theta_x: f64, theta_y: f64 },
    /// Two-component normal mixtures centred at (1,1) and (-1,-1) with
    /// correlations +rho and -rho.
    GaussianMixture { rho_x: f64, rho_y: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorFamily {
    None,
    IidGaussian { sd: [f64; 3] },
    /// Gamma(shape, scale) draws, centred and rescaled to the target SDs.
    GammaIid { shape: f64, scale: f64, sd: [f64; 3] },
    JointGaussian { cov: [[f64; 3]; 3] },
    GaussianMixtureErrors {
        weights: [f64; 2],
        means: [[f64; 3]; 2],
        cov: [[f64; 3]; 3],
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TechParams {
    pub alpha_cc: f64,
    pub alpha_mm: f64,
    pub beta_c: f64,
    pub beta_m: f64,
}

impl TechParams {
    pub fn to_tech(&self) -> Result<ProductionTech> {
        ProductionTech::diagonal(self.alpha_cc, self.alpha_mm, self.beta_c, self.beta_m)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.alpha_cc, self.alpha_mm, self.beta_c, self.beta_m]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub family: Family,
    pub n: usize,
    pub tech: TechParams,
    #[serde(default = "default_wage_constant")]
    pub wage_constant: f64,
    pub errors: ErrorFamily,
    pub seed: u64,
}

fn default_wage_constant() -> f64 {
    DEFAULT_WAGE_CONSTANT
}

const REFERENCE_TECH: TechParams = TechParams {
    alpha_cc: 0.5,
    alpha_mm: 0.2,
    beta_c: 1.7,
    beta_m: -0.4,
};

const REFERENCE_SD: [f64; 3] = [2.0, 1.0, 1.0];

pub const PRESET_NAMES: [&str; 8] = [
    "gaussian",
    "gumbel-gamma",
    "gumbel-joint",
    "mixture",
    "sweep-gaussian",
    "sweep-gumbel",
    "sweep-gumbel-raw",
    "gaussian-noiseless",
];

impl DgpConfig {
    pub fn gaussian(n: usize, seed: u64) -> Self {
        Self {
            family: Family::Gaussian {
                rho_x: -0.4,
                rho_y: -0.5,
            },
            n,
            tech: REFERENCE_TECH,
            wage_constant: DEFAULT_WAGE_CONSTANT,
            errors: ErrorFamily::IidGaussian { sd: REFERENCE_SD },
            seed,
        }
    }

    pub fn gumbel_gamma(n: usize, seed: u64) -> Self {
        Self {
            family: Family::GumbelTransformed {
                theta_x: 1.3,
                theta_y: 1.4,
            },
            errors: ErrorFamily::GammaIid {
                shape: 1.0,
                scale: 2.0,
                sd: REFERENCE_SD,
            },
            ..Self::gaussian(n, seed)
        }
    }

    pub fn gumbel_joint(n: usize, seed: u64) -> Self {
        Self {
            errors: ErrorFamily::JointGaussian {
                cov: [[2.0, 1.0, 1.0], [1.0, 1.0, 0.5], [1.0, 0.5, 1.0]],
            },
            ..Self::gumbel_gamma(n, seed)
        }
    }

    pub fn mixture(n: usize, seed: u64) -> Self {
        Self {
            family: Family::GaussianMixture {
                rho_x: 0.4,
                rho_y: 0.5,
            },
            errors: ErrorFamily::GaussianMixtureErrors {
                // weights put the mixture mean at zero: 0.75 * 1 + 0.25 * (-3) = 0
                weights: [0.75, 0.25],
                means: [[1.0, 1.0, 1.0], [-3.0, -3.0, -3.0]],
                cov: [[1.0, 0.7, 0.7], [0.7, 1.0, 0.3], [0.7, 0.3, 1.0]],
            },
            ..Self::gaussian(n, seed)
        }
    }

    /// Technology-sweep designs use `s = a_CC x_C y_C + a_MM x_M y_M`.
    pub fn sweep_gaussian(n: usize, seed: u64) -> Self {
        Self {
            family: Family::Gaussian {
                rho_x: -0.2,
                rho_y: -0.6,
            },
            tech: TechParams {
                beta_c: 0.0,
                beta_m: 0.0,
                ..REFERENCE_TECH
            },
            errors: ErrorFamily::None,
            ..Self::gaussian(n, seed)
        }
    }

    pub fn sweep_gumbel(n: usize, seed: u64) -> Self {
        Self {
            family: Family::GumbelTransformed {
                theta_x: 1.25,
                theta_y: 2.5,
            },
            ..Self::sweep_gaussian(n, seed)
        }
    }

    pub fn sweep_gumbel_raw(n: usize, seed: u64) -> Self {
        Self {
            family: Family::GumbelRaw {
                theta_x: 1.25,
                theta_y: 2.5,
            },
            ..Self::sweep_gaussian(n, seed)
        }
    }

    pub fn preset(name: &str, n: usize, seed: u64) -> Result<Self> {
        Ok(match name {
            "gaussian" => Self::gaussian(n, seed),
            "gaussian-noiseless" => Self {
                errors: ErrorFamily::None,
                ..Self::gaussian(n, seed)
            },
            "gumbel-gamma" => Self::gumbel_gamma(n, seed),
            "gumbel-joint" => Self::gumbel_joint(n, seed),
            "mixture" => Self::mixture(n, seed),
            "sweep-gaussian" => Self::sweep_gaussian(n, seed),
            "sweep-gumbel" => Self::sweep_gumbel(n, seed),
            "sweep-gumbel-raw" => Self::sweep_gumbel_raw(n, seed),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}' (known: {})",
                    PRESET_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("sample size must be >= 2, got {}", self.n)));
        }
        self.tech.to_tech()?;
        match self.family {
            Family::Gaussian { rho_x, rho_y } | Family::GaussianMixture { rho_x, rho_y } => {
                if !(rho_x.abs() < 1.0 && rho_y.abs() < 1.0) {
                    return Err(Error::Domain("correlations must lie in (-1, 1)".into()));
                }
            }
            Family::GumbelTransformed { theta_x, theta_y } | Family::GumbelRaw { theta_x, theta_y } => {
                copula::check_shape(theta_x)?;
                copula::check_shape(theta_y)?;
            }
        }
        if let Family::Gaussian { .. } = self.family {
            if self.tech.alpha_cc <= 0.0 || self.tech.alpha_mm <= 0.0 {
                return Err(Error::Domain(
                    "the Gaussian design needs positive complementarities".into(),
                ));
            }
        }
        match self.errors {
            ErrorFamily::GammaIid { shape, scale, sd } => {
                if !(shape > 0.0 && scale > 0.0) || sd.iter().any(|s| !(*s >= 0.0)) {
                    return Err(Error::Domain("gamma errors need positive shape and scale".into()));
                }
            }
            ErrorFamily::IidGaussian { sd } => {
                if sd.iter().any(|s| !(*s >= 0.0)) {
                    return Err(Error::Domain("error SDs must be nonnegative".into()));
                }
            }
            ErrorFamily::JointGaussian { cov } => {
                cholesky3(&cov)?;
            }
            ErrorFamily::GaussianMixtureErrors { weights, cov, .. } => {
                if (weights[0] + weights[1] - 1.0).abs() > 1e-12 || weights.iter().any(|w| *w < 0.0) {
                    return Err(Error::Domain("mixture weights must be nonnegative and sum to 1".into()));
                }
                cholesky3(&cov)?;
            }
            ErrorFamily::None => {}
        }
        Ok(())
    }

    /// Whether the parametric baselines need rank-Gaussianised inputs.
    pub fn non_normal_margins(&self) -> bool {
        matches!(self.family, Family::GaussianMixture { .. } | Family::GumbelRaw { .. })
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

fn cholesky3(cov: &[[f64; 3]; 3]) -> Result<Matrix3<f64>> {
    let m = Matrix3::from_fn(|i, j| cov[i][j]);
    if (m - m.transpose()).amax() > 1e-12 {
        return Err(Error::Domain("error covariance must be symmetric".into()));
    }
    m.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Domain("error covariance must be positive definite".into()))
}

/// Error-free equilibrium outcome for one draw.
#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub x: DMatrix<f64>,
    pub y_star: DMatrix<f64>,
    pub w_star: Vec<f64>,
    /// Present for designs solved by assignment.
    pub coupling: Option<Coupling>,
}

fn draw_bivariate_normal<R: Rng + ?Sized>(rng: &mut R, mean: [f64; 2], rho: f64) -> [f64; 2] {
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    [mean[0] + z1, mean[1] + rho * z1 + (1.0 - rho * rho).sqrt() * z2]
}

fn draw_cloud<R: Rng + ?Sized>(family: &Family, which_y: bool, n: usize, rng: &mut R) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, 2);
    for i in 0..n {
        let v = match *family {
            Family::Gaussian { rho_x, rho_y } => {
                draw_bivariate_normal(rng, [0.0, 0.0], if which_y { rho_y } else { rho_x })
            }
            Family::GaussianMixture { rho_x, rho_y } => {
                let rho = if which_y { rho_y } else { rho_x };
                if rng.gen::<f64>() < 0.5 {
                    draw_bivariate_normal(rng, [1.0, 1.0], rho)
                } else {
                    draw_bivariate_normal(rng, [-1.0, -1.0], -rho)
                }
            }
            Family::GumbelTransformed { theta_x, theta_y } => {
                let u = copula::gumbel_pair(if which_y { theta_y } else { theta_x }, rng);
                [stats::normal_quantile(u[0]), stats::normal_quantile(1.0 - u[1])]
            }
            Family::GumbelRaw { theta_x, theta_y } => {
                let u = copula::gumbel_pair(if which_y { theta_y } else { theta_x }, rng);
                [u[0], 1.0 - u[1]]
            }
        };
        out[(i, 0)] = v[0];
        out[(i, 1)] = v[1];
    }
    out
}

/// Independent worker and job clouds of the design, before any matching.
pub fn draw_clouds<R: Rng + ?Sized>(cfg: &DgpConfig, rng: &mut R) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    cfg.validate()?;
    let x = draw_cloud(&cfg.family, false, cfg.n, rng);
    let y = draw_cloud(&cfg.family, true, cfg.n, rng);
    Ok((x, y))
}

/// Draws skills and computes the noiseless equilibrium.
pub fn draw_equilibrium<R: Rng + ?Sized>(cfg: &DgpConfig, rng: &mut R) -> Result<Equilibrium> {
    cfg.validate()?;
    let tech = cfg.tech.to_tech()?;
    let n = cfg.n;
    match cfg.family {
        Family::Gaussian { rho_x, rho_y } => {
            let x = draw_cloud(&cfg.family, false, n, rng);
            let eq = GaussianEquilibrium::new(rho_x, rho_y, cfg.tech.alpha_mm / cfg.tech.alpha_cc)?;
            let mut y = DMatrix::zeros(n, 2);
            let mut w = Vec::with_capacity(n);
            for i in 0..n {
                let xi = [x[(i, 0)], x[(i, 1)]];
                let yi = eq.assign(xi);
                y[(i, 0)] = yi[0];
                y[(i, 1)] = yi[1];
                w.push(closed_form_wage(xi, &tech, &eq.j, cfg.wage_constant)?);
            }
            Ok(Equilibrium {
                x,
                y_star: y,
                w_star: w,
                coupling: None,
            })
        }
        _ => {
            let (x, y) = draw_clouds(cfg, rng)?;
            solve_equilibrium(x, &y, &tech, cfg.wage_constant)
        }
    }
}

/// Equilibrium of given clouds by exact assignment; wages are the worker
/// duals shifted to mean `wage_constant`.
pub fn solve_equilibrium(
    x: DMatrix<f64>,
    y: &DMatrix<f64>,
    tech: &ProductionTech,
    wage_constant: f64,
) -> Result<Equilibrium> {
    let s = ot::build_surplus_matrix(&x, y, tech)?;
    let coupling = ot::solve_assignment(&s)?.normalized(DualNormalization::ZeroMean)?;
    let y_star = ot::assignment_map(&coupling, y)?;
    let w_star = coupling.worker_dual.iter().map(|w| w + wage_constant).collect();
    Ok(Equilibrium {
        x,
        y_star,
        w_star,
        coupling: Some(coupling),
    })
}

/// Measurement errors, one row per observation: (wage, y_C, y_M).
pub fn draw_errors<R: Rng + ?Sized>(errors: &ErrorFamily, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let mut e = DMatrix::zeros(n, 3);
    match *errors {
        ErrorFamily::None => {}
        ErrorFamily::IidGaussian { sd } => {
            for i in 0..n {
                for k in 0..3 {
                    let z: f64 = StandardNormal.sample(rng);
                    e[(i, k)] = sd[k] * z;
                }
            }
        }
        ErrorFamily::GammaIid { shape, scale, sd } => {
            let g = Gamma::new(shape, scale)
                .map_err(|err| Error::Domain(format!("gamma errors: {err}")))?;
            let mean = shape * scale;
            let spread = shape.sqrt() * scale;
            for i in 0..n {
                for k in 0..3 {
                    let v: f64 = g.sample(rng);
                    e[(i, k)] = (v - mean) / spread * sd[k];
                }
            }
        }
        ErrorFamily::JointGaussian { cov } => {
            let l = cholesky3(&cov)?;
            for i in 0..n {
                let z = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
                let v = l * z;
                for k in 0..3 {
                    e[(i, k)] = v[k];
                }
            }
        }
        ErrorFamily::GaussianMixtureErrors { weights, means, cov } => {
            let l = cholesky3(&cov)?;
            for i in 0..n {
                let comp = if rng.gen::<f64>() < weights[0] { 0 } else { 1 };
                let z = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
                let v = l * z;
                for k in 0..3 {
                    e[(i, k)] = means[comp][k] + v[k];
                }
            }
        }
    }
    Ok(e)
}

pub fn add_errors(eq: &Equilibrium, errors: &DMatrix<f64>) -> Result<MatchedSample> {
    let n = eq.w_star.len();
    if errors.nrows() != n || errors.ncols() != 3 {
        return Err(Error::dimension("error matrix", format!("{n} x 3"), format!("{} x {}", errors.nrows(), errors.ncols())));
    }
    let wage = (0..n).map(|i| eq.w_star[i] + errors[(i, 0)]).collect();
    let y = DMatrix::from_fn(n, 2, |i, k| eq.y_star[(i, k)] + errors[(i, k + 1)]);
    MatchedSample::new(wage, eq.x.clone(), y)
}

/// Draws one observed sample from `cfg`, seeded by `cfg.seed`.
pub fn draw_sample(cfg: &DgpConfig) -> Result<(Equilibrium, MatchedSample)> {
    let mut rng = cfg.rng();
    let eq = draw_equilibrium(cfg, &mut rng)?;
    let e = draw_errors(&cfg.errors, cfg.n, &mut rng)?;
    let s = add_errors(&eq, &e)?;
    Ok((eq, s))
}

/// Population assignment matrix of the Gaussian design (for checks).
pub fn gaussian_assignment(cfg: &DgpConfig) -> Result<Matrix2<f64>> {
    match cfg.family {
        Family::Gaussian { rho_x, rho_y } => {
            Ok(GaussianEquilibrium::new(rho_x, rho_y, cfg.tech.alpha_mm / cfg.tech.alpha_cc)?.j)
        }
        _ => Err(Error::Config("closed-form assignment exists only for the Gaussian family".into())),
    }
}
