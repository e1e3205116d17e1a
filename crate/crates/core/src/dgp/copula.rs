//! Gumbel copula draws by the Marshall-Olkin frailty construction.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

/// Positive stable variable with Laplace transform `exp(-s^a)`, `0 < a <= 1`
/// (Kanter's representation).
pub fn positive_stable<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a >= 1.0 {
        return 1.0;
    }
    let u: f64 = rng.gen_range(f64::EPSILON..std::f64::consts::PI);
    let w: f64 = Exp1.sample(rng);
    let part1 = (a * u).sin() / u.sin().powf(1.0 / a);
    let part2 = (((1.0 - a) * u).sin() / w).powf((1.0 - a) / a);
    part1 * part2
}

/// One bivariate draw `(u1, u2)` with uniform margins from a Gumbel copula
/// with shape `theta >= 1`.
pub fn gumbel_pair<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> [f64; 2] {
    let v = positive_stable(1.0 / theta, rng);
    let mut out = [0.0; 2];
    for slot in &mut out {
        let e: f64 = Exp1.sample(rng);
        let u = (-(e / v).powf(1.0 / theta)).exp();
        // keep strictly inside (0, 1) so normal quantiles stay finite
        *slot = u.clamp(1e-300, 1.0 - f64::EPSILON / 2.0);
    }
    out
}

pub fn check_shape(theta: f64) -> Result<()> {
    if !(theta >= 1.0) || !theta.is_finite() {
        return Err(Error::Domain(format!("Gumbel shape must be finite and >= 1, got {theta}")));
    }
    Ok(())
}

/// Kendall's tau implied by a Gumbel shape.
pub fn gumbel_kendall_tau(theta: f64) -> f64 {
    1.0 - 1.0 / theta
}
