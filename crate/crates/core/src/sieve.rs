//! Tensor-product Bernstein polynomials on a rectangle.
//!
//! Coefficients are stored row-major with the cognitive index outermost:
//! entry `(j_c, j_m)` lives at `j_c * (k_m + 1) + j_m`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points this far outside the box are clamped onto it; further out is an error.
pub const DOMAIN_CLAMP_TOL: f64 = 1e-12;
/// Margin added on each side of the data range, as a fraction of the range.
pub const DOMAIN_MARGIN: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Domain {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Result<Self> {
        for a in 0..2 {
            if !lo[a].is_finite() || !hi[a].is_finite() {
                return Err(Error::NonFinite("sieve domain bounds".into()));
            }
            if hi[a] <= lo[a] {
                return Err(Error::Domain(format!(
                    "empty sieve domain along axis {a}: [{}, {}]",
                    lo[a], hi[a]
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// Data min/max per column, widened by `DOMAIN_MARGIN` of the range.
    pub fn from_data(x: &DMatrix<f64>) -> Result<Self> {
        if x.ncols() != 2 {
            return Err(Error::dimension("sieve data columns", 2, x.ncols()));
        }
        if x.nrows() == 0 {
            return Err(Error::InvalidInput("cannot size a sieve domain from no data".into()));
        }
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for a in 0..2 {
            let col = x.column(a);
            let (mn, mx) = (col.min(), col.max());
            if !(mx > mn) {
                return Err(Error::Domain(format!("column {a} is constant; sieve domain undefined")));
            }
            let pad = DOMAIN_MARGIN * (mx - mn);
            lo[a] = mn - pad;
            hi[a] = mx + pad;
        }
        Self::new(lo, hi)
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        (0..2).all(|a| x[a] >= self.lo[a] && x[a] <= self.hi[a])
    }

    /// Affine map onto the unit square, with clamping inside tolerance.
    pub fn rescale(&self, x: [f64; 2]) -> Result<[f64; 2]> {
        let mut u = [0.0; 2];
        for a in 0..2 {
            let v = x[a];
            if !v.is_finite() {
                return Err(Error::NonFinite("sieve evaluation point".into()));
            }
            let tol_lo = DOMAIN_CLAMP_TOL * self.lo[a].abs().max(1.0);
            let tol_hi = DOMAIN_CLAMP_TOL * self.hi[a].abs().max(1.0);
            if v < self.lo[a] - tol_lo || v > self.hi[a] + tol_hi {
                return Err(Error::Domain(format!(
                    "point {v} outside sieve domain [{}, {}] on axis {a}",
                    self.lo[a], self.hi[a]
                )));
            }
            u[a] = ((v - self.lo[a]) / self.width(a)).clamp(0.0, 1.0);
        }
        Ok(u)
    }
}

/// Degree-k Bernstein polynomials at u, built with the triangular recurrence.
pub fn bernstein_1d(k: usize, u: f64) -> Vec<f64> {
    let mut b = vec![0.0; k + 1];
    b[0] = 1.0;
    let t = 1.0 - u;
    for deg in 1..=k {
        for j in (1..=deg).rev() {
            b[j] = t * b[j] + u * b[j - 1];
        }
        b[0] *= t;
    }
    b
}

/// d/du of the degree-k Bernstein polynomials.
pub fn bernstein_1d_deriv(k: usize, u: f64) -> Vec<f64> {
    let mut d = vec![0.0; k + 1];
    if k == 0 {
        return d;
    }
    let lower = bernstein_1d(k - 1, u);
    let kf = k as f64;
    for j in 0..=k {
        let left = if j >= 1 { lower[j - 1] } else { 0.0 };
        let right = if j < k { lower[j] } else { 0.0 };
        d[j] = kf * (left - right);
    }
    d
}

pub fn n_coefficients(k_c: usize, k_m: usize) -> usize {
    (k_c + 1) * (k_m + 1)
}

/// Basis values and both partial derivatives at one point.
#[derive(Clone, Debug)]
pub struct BasisEval {
    pub value: Vec<f64>,
    pub grad_c: Vec<f64>,
    pub grad_m: Vec<f64>,
}

pub fn basis_eval(x: [f64; 2], k_c: usize, k_m: usize, domain: &Domain) -> Result<BasisEval> {
    let u = domain.rescale(x)?;
    let bc = bernstein_1d(k_c, u[0]);
    let bm = bernstein_1d(k_m, u[1]);
    let dc = bernstein_1d_deriv(k_c, u[0]);
    let dm = bernstein_1d_deriv(k_m, u[1]);
    let sc = 1.0 / domain.width(0);
    let sm = 1.0 / domain.width(1);
    let p = n_coefficients(k_c, k_m);
    let mut value = Vec::with_capacity(p);
    let mut grad_c = Vec::with_capacity(p);
    let mut grad_m = Vec::with_capacity(p);
    for jc in 0..=k_c {
        for jm in 0..=k_m {
            value.push(bc[jc] * bm[jm]);
            grad_c.push(dc[jc] * bm[jm] * sc);
            grad_m.push(bc[jc] * dm[jm] * sm);
        }
    }
    Ok(BasisEval {
        value,
        grad_c,
        grad_m,
    })
}

pub fn basis_row(x: [f64; 2], k_c: usize, k_m: usize, domain: &Domain) -> Result<Vec<f64>> {
    let u = domain.rescale(x)?;
    let bc = bernstein_1d(k_c, u[0]);
    let bm = bernstein_1d(k_m, u[1]);
    let mut out = Vec::with_capacity(n_coefficients(k_c, k_m));
    for a in &bc {
        for b in &bm {
            out.push(a * b);
        }
    }
    Ok(out)
}

/// Rows whose inner products with gamma give the two partial derivatives in x units.
pub fn basis_grad_rows(
    x: [f64; 2],
    k_c: usize,
    k_m: usize,
    domain: &Domain,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let e = basis_eval(x, k_c, k_m, domain)?;
    Ok((e.grad_c, e.grad_m))
}

/// Second differences along each axis; rows `r` with `r . gamma >= 0`.
/// Cognitive-direction rows come first.
pub fn convexity_constraints(k_c: usize, k_m: usize) -> DMatrix<f64> {
    let p = n_coefficients(k_c, k_m);
    let idx = |jc: usize, jm: usize| jc * (k_m + 1) + jm;
    let rows_c = k_c.saturating_sub(1) * (k_m + 1);
    let rows_m = (k_c + 1) * k_m.saturating_sub(1);
    let mut a = DMatrix::zeros(rows_c + rows_m, p);
    let mut r = 0;
    if k_c >= 2 {
        for jc in 0..k_c - 1 {
            for jm in 0..=k_m {
                a[(r, idx(jc, jm))] = 1.0;
                a[(r, idx(jc + 1, jm))] = -2.0;
                a[(r, idx(jc + 2, jm))] = 1.0;
                r += 1;
            }
        }
    }
    if k_m >= 2 {
        for jc in 0..=k_c {
            for jm in 0..k_m - 1 {
                a[(r, idx(jc, jm))] = 1.0;
                a[(r, idx(jc, jm + 1))] = -2.0;
                a[(r, idx(jc, jm + 2))] = 1.0;
                r += 1;
            }
        }
    }
    a
}

/// `n ln(rss / n) + p ln n`, lower is better.
pub fn bic_score(rss: f64, n: usize, n_params: usize) -> f64 {
    let nf = n as f64;
    nf * (rss / nf).ln() + n_params as f64 * nf.ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernsteinTensor {
    pub k_c: usize,
    pub k_m: usize,
    pub domain: Domain,
    pub gamma: Vec<f64>,
}

impl BernsteinTensor {
    pub fn new(k_c: usize, k_m: usize, domain: Domain, gamma: Vec<f64>) -> Result<Self> {
        let p = n_coefficients(k_c, k_m);
        if gamma.len() != p {
            return Err(Error::dimension("sieve coefficients", p, gamma.len()));
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("sieve coefficients".into()));
        }
        Ok(Self {
            k_c,
            k_m,
            domain,
            gamma,
        })
    }

    pub fn zeros(k_c: usize, k_m: usize, domain: Domain) -> Self {
        Self {
            k_c,
            k_m,
            domain,
            gamma: vec![0.0; n_coefficients(k_c, k_m)],
        }
    }

    /// Coefficients sampling `f` at the grid nodes; exact for affine `f`.
    pub fn from_node_values(
        k_c: usize,
        k_m: usize,
        domain: Domain,
        f: impl Fn([f64; 2]) -> f64,
    ) -> Self {
        let node = |j: usize, k: usize| if k == 0 { 0.5 } else { j as f64 / k as f64 };
        let mut gamma = Vec::with_capacity(n_coefficients(k_c, k_m));
        for jc in 0..=k_c {
            for jm in 0..=k_m {
                let x = [
                    domain.lo[0] + node(jc, k_c) * domain.width(0),
                    domain.lo[1] + node(jm, k_m) * domain.width(1),
                ];
                gamma.push(f(x));
            }
        }
        Self {
            k_c,
            k_m,
            domain,
            gamma,
        }
    }

    pub fn n_coefficients(&self) -> usize {
        self.gamma.len()
    }

    pub fn coef(&self, jc: usize, jm: usize) -> f64 {
        self.gamma[jc * (self.k_m + 1) + jm]
    }

    pub fn value(&self, x: [f64; 2]) -> Result<f64> {
        let row = basis_row(x, self.k_c, self.k_m, &self.domain)?;
        Ok(dot(&row, &self.gamma))
    }

    pub fn gradient(&self, x: [f64; 2]) -> Result<[f64; 2]> {
        let (gc, gm) = basis_grad_rows(x, self.k_c, self.k_m, &self.domain)?;
        Ok([dot(&gc, &self.gamma), dot(&gm, &self.gamma)])
    }

    /// Smallest second difference (convexity slack); `+inf` when there are no constraints.
    pub fn min_convexity_slack(&self) -> f64 {
        let a = convexity_constraints(self.k_c, self.k_m);
        if a.nrows() == 0 {
            return f64::INFINITY;
        }
        let s = &a * DVector::from_column_slice(&self.gamma);
        s.min()
    }

    pub fn is_convex_feasible(&self, tol: f64) -> bool {
        self.min_convexity_slack() >= -tol
    }

    /// Same function, cognitive degree raised by one.
    pub fn elevate_c(&self) -> Self {
        let k = self.k_c;
        let km1 = self.k_m + 1;
        let mut gamma = vec![0.0; (k + 2) * km1];
        for jm in 0..km1 {
            let col: Vec<f64> = (0..=k).map(|jc| self.coef(jc, jm)).collect();
            for (j, v) in elevate_1d(&col).into_iter().enumerate() {
                gamma[j * km1 + jm] = v;
            }
        }
        Self {
            k_c: k + 1,
            k_m: self.k_m,
            domain: self.domain,
            gamma,
        }
    }

    /// Same function, manual degree raised by one.
    pub fn elevate_m(&self) -> Self {
        let kc1 = self.k_c + 1;
        let new_km1 = self.k_m + 2;
        let mut gamma = Vec::with_capacity(kc1 * new_km1);
        for jc in 0..kc1 {
            let row = &self.gamma[jc * (self.k_m + 1)..(jc + 1) * (self.k_m + 1)];
            gamma.extend(elevate_1d(row));
        }
        Self {
            k_c: self.k_c,
            k_m: self.k_m + 1,
            domain: self.domain,
            gamma,
        }
    }

    /// Two header rows (degrees and domain), then one `j_C,j_M,gamma` row per coefficient.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k_C", "k_M", "lo_C", "hi_C", "lo_M", "hi_M"])?;
        w.write_record([
            self.k_c.to_string(),
            self.k_m.to_string(),
            self.domain.lo[0].to_string(),
            self.domain.hi[0].to_string(),
            self.domain.lo[1].to_string(),
            self.domain.hi[1].to_string(),
        ])?;
        w.write_record(["j_C", "j_M", "gamma", "", "", ""])?;
        for jc in 0..=self.k_c {
            for jm in 0..=self.k_m {
                w.write_record([
                    jc.to_string(),
                    jm.to_string(),
                    self.coef(jc, jm).to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let rows: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>()?;
        let bad = |row: usize, msg: &str| Error::Data {
            row,
            column: String::new(),
            message: msg.to_string(),
        };
        if rows.len() < 3 {
            return Err(bad(rows.len(), "sieve file truncated"));
        }
        let num = |rec: &csv::StringRecord, i: usize, row: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| bad(row, &format!("field {} is not numeric", i + 1)))
        };
        let k_c = num(&rows[1], 0, 2)? as usize;
        let k_m = num(&rows[1], 1, 2)? as usize;
        let domain = Domain::new(
            [num(&rows[1], 2, 2)?, num(&rows[1], 4, 2)?],
            [num(&rows[1], 3, 2)?, num(&rows[1], 5, 2)?],
        )?;
        let p = n_coefficients(k_c, k_m);
        if rows.len() != 3 + p {
            return Err(bad(rows.len(), &format!("expected {p} coefficient rows")));
        }
        let mut gamma = vec![0.0; p];
        for (i, rec) in rows[3..].iter().enumerate() {
            let row = i + 4;
            let jc = num(rec, 0, row)? as usize;
            let jm = num(rec, 1, row)? as usize;
            if jc > k_c || jm > k_m {
                return Err(bad(row, "coefficient index out of range"));
            }
            gamma[jc * (k_m + 1) + jm] = num(rec, 2, row)?;
        }
        Self::new(k_c, k_m, domain, gamma)
    }
}

fn elevate_1d(g: &[f64]) -> Vec<f64> {
    let k = g.len() - 1;
    let kp1 = (k + 1) as f64;
    (0..=k + 1)
        .map(|j| {
            let t = j as f64 / kp1;
            let left = if j >= 1 { g[j - 1] } else { 0.0 };
            let right = if j <= k { g[j] } else { 0.0 };
            t * left + (1.0 - t) * right
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Domain {
        Domain::new([-1.0, 0.5], [2.0, 3.0]).unwrap()
    }

    fn binom(n: usize, k: usize) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    // de Casteljau on the coefficient net, one axis at a time.
    fn de_casteljau(c: &[f64], t: f64) -> f64 {
        let mut b = c.to_vec();
        let n = b.len();
        for r in 1..n {
            for i in 0..n - r {
                b[i] = (1.0 - t) * b[i] + t * b[i + 1];
            }
        }
        b[0]
    }

    #[test]
    fn matches_closed_form_and_de_casteljau() {
        let d = unit();
        let (kc, km) = (3, 3);
        let x = [0.4, 1.9];
        let u = d.rescale(x).unwrap();
        let row = basis_row(x, kc, km, &d).unwrap();
        for jc in 0..=kc {
            for jm in 0..=km {
                let e = binom(kc, jc) * u[0].powi(jc as i32) * (1.0 - u[0]).powi((kc - jc) as i32)
                    * binom(km, jm) * u[1].powi(jm as i32) * (1.0 - u[1]).powi((km - jm) as i32);
                assert!((row[jc * (km + 1) + jm] - e).abs() < 1e-15);
            }
        }
        let gamma: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 - 1.3).collect();
        let inner: Vec<f64> = (0..=kc)
            .map(|jc| de_casteljau(&gamma[jc * 4..jc * 4 + 4], u[1]))
            .collect();
        let oracle = de_casteljau(&inner, u[0]);
        assert!((dot(&row, &gamma) - oracle).abs() < 1e-13);
    }

    #[test]
    fn corner_is_a_unit_vector() {
        let d = unit();
        let row = basis_row([d.lo[0], d.lo[1]], 2, 3, &d).unwrap();
        assert_eq!(row[0], 1.0);
        assert!(row[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outside_domain_is_rejected_but_rounding_is_clamped() {
        let d = unit();
        assert!(basis_row([2.0 + 1e-14, 1.0], 2, 2, &d).is_ok());
        assert!(basis_row([2.0 + 1e-6, 1.0], 2, 2, &d).is_err());
    }

    #[test]
    fn ramp_has_constant_gradient() {
        let d = unit();
        let (kc, km) = (4, 3);
        let mut gamma = vec![0.0; n_coefficients(kc, km)];
        for jc in 0..=kc {
            for jm in 0..=km {
                gamma[jc * (km + 1) + jm] = jc as f64 / kc as f64;
            }
        }
        let t = BernsteinTensor::new(kc, km, d, gamma).unwrap();
        let g = t.gradient([0.3, 2.2]).unwrap();
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-13);
        assert!(g[1].abs() < 1e-13);
    }

    #[test]
    fn constraint_counts_and_band() {
        assert_eq!(convexity_constraints(2, 2).nrows(), 6);
        assert_eq!(convexity_constraints(1, 1).nrows(), 0);
        assert_eq!(convexity_constraints(3, 4).nrows(), 2 * 5 + 4 * 3);
        let a = convexity_constraints(3, 0);
        let expect = DMatrix::from_row_slice(2, 4, &[1.0, -2.0, 1.0, 0.0, 0.0, 1.0, -2.0, 1.0]);
        assert_eq!(a, expect);
    }

    #[test]
    fn gamma_csv_round_trip() {
        let t = BernsteinTensor::new(2, 1, unit(), vec![0.5, -1.25, 3.0, 0.0, 1e-3, 7.0]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = BernsteinTensor::read_csv(&buf[..]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn elevation_both_axes() {
        let t = BernsteinTensor::new(2, 2, unit(), (0..9).map(|i| (i as f64).sin()).collect())
            .unwrap();
        let e = t.elevate_c().elevate_m();
        for x in [[0.0, 1.0], [-0.9, 2.9], [1.5, 0.6]] {
            assert!((t.value(x).unwrap() - e.value(x).unwrap()).abs() < 1e-12);
        }
    }
}
