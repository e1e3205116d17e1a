//! Profiled solver shared by the three sieve estimators.
//!
//! Parameters are split into `kappa = (kappa_C, kappa_M)` and the linear
//! block `q = (gamma, b_C, b_M)`. Writing the residual rows as
//! `rho_a = z_a - m_a d_a'q` with `m = (1, kappa_C, kappa_M)`, the weighted
//! objective is
//!
//! ```text
//! sum_ab [ s_ab - 2 m_a q'h_ab + m_a m_b q'G_ab q ]
//! ```
//!
//! where `G_ab = sum_i W_i,ab d_a d_b'`, `h_ab = sum_i W_i,ab d_a z_b` and
//! `s_ab = sum_i W_i,ab z_a z_b` are accumulated once per weighting. For
//! fixed kappa the problem in `q` is a QP; for fixed `q` it is a 2 x 2
//! linear system in kappa. Every iteration therefore costs O(dim^3)
//! regardless of the sample size.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2};

use super::KAPPA_BOUND;
use crate::error::{Error, Result};
use crate::qp;
use crate::sample::MatchedSample;
use crate::sieve::{basis_eval, convexity_constraints, Domain};

/// Stacked regressors: `dw = [basis, x]`, `dc = [d basis/dx_C, 0, 0]`, `dm` likewise.
pub(crate) struct Design {
    pub n: usize,
    pub p: usize,
    pub dim: usize,
    pub k_c: usize,
    pub k_m: usize,
    pub domain: Domain,
    pub d: [DMatrix<f64>; 3],
    pub z: DMatrix<f64>,
}

impl Design {
    pub fn new(sample: &MatchedSample, k_c: usize, k_m: usize, domain: Domain) -> Result<Self> {
        let n = sample.len();
        let p = (k_c + 1) * (k_m + 1);
        let dim = p + 2;
        let mut dw = DMatrix::zeros(n, dim);
        let mut dc = DMatrix::zeros(n, dim);
        let mut dm = DMatrix::zeros(n, dim);
        let mut z = DMatrix::zeros(n, 3);
        for i in 0..n {
            let x = sample.x_row(i);
            let e = basis_eval(x, k_c, k_m, &domain).map_err(|err| match err {
                Error::Domain(m) => Error::Domain(format!("observation {}: {m}", i + 1)),
                other => other,
            })?;
            for j in 0..p {
                dw[(i, j)] = e.value[j];
                dc[(i, j)] = e.grad_c[j];
                dm[(i, j)] = e.grad_m[j];
            }
            dw[(i, p)] = x[0];
            dw[(i, p + 1)] = x[1];
            z[(i, 0)] = sample.wage[i];
            z[(i, 1)] = sample.y[(i, 0)];
            z[(i, 2)] = sample.y[(i, 1)];
        }
        Ok(Self {
            n,
            p,
            dim,
            k_c,
            k_m,
            domain,
            d: [dw, dc, dm],
            z,
        })
    }

    /// Constraint rows padded with zero columns for `b`.
    pub fn constraint_matrix(&self) -> DMatrix<f64> {
        let a = convexity_constraints(self.k_c, self.k_m);
        let mut out = DMatrix::zeros(a.nrows(), self.dim);
        out.view_mut((0, 0), (a.nrows(), self.p)).copy_from(&a);
        out
    }

    /// Per-row residuals at `(kappa, q)`, n x 3.
    pub fn residuals(&self, kappa: [f64; 2], q: &DVector<f64>) -> DMatrix<f64> {
        let t: Vec<DVector<f64>> = self.d.iter().map(|d| d * q).collect();
        let m = [1.0, kappa[0], kappa[1]];
        DMatrix::from_fn(self.n, 3, |i, a| self.z[(i, a)] - m[a] * t[a][i])
    }
}

/// Sufficient statistics of the weighted objective.
#[derive(Clone)]
pub(crate) struct Blocks {
    g: Vec<DMatrix<f64>>,
    h: Vec<DVector<f64>>,
    s: Matrix3<f64>,
}

impl Blocks {
    fn idx(a: usize, b: usize) -> usize {
        a * 3 + b
    }

    pub fn g(&self, a: usize, b: usize) -> &DMatrix<f64> {
        &self.g[Self::idx(a, b)]
    }

    pub fn h(&self, a: usize, b: usize) -> &DVector<f64> {
        &self.h[Self::idx(a, b)]
    }

    /// Raw cross moments `D_a'D_b`, `D_a'z_b`, `z_a'z_b` (all nine pairs).
    pub fn cross_moments(d: &Design) -> Self {
        let mut g = Vec::with_capacity(9);
        let mut h = Vec::with_capacity(9);
        let mut s = Matrix3::zeros();
        for a in 0..3 {
            for b in 0..3 {
                g.push(d.d[a].tr_mul(&d.d[b]));
                h.push(d.d[a].tr_mul(&d.z.column(b)));
                s[(a, b)] = d.z.column(a).dot(&d.z.column(b));
            }
        }
        Self { g, h, s }
    }

    /// Blocks for a weight matrix shared by all rows.
    pub fn with_constant_weight(raw: &Blocks, w: &Matrix3<f64>) -> Self {
        let mut g = Vec::with_capacity(9);
        let mut h = Vec::with_capacity(9);
        let mut s = Matrix3::zeros();
        for a in 0..3 {
            for b in 0..3 {
                let k = Self::idx(a, b);
                g.push(&raw.g[k] * w[(a, b)]);
                h.push(&raw.h[k] * w[(a, b)]);
                s[(a, b)] = raw.s[(a, b)] * w[(a, b)];
            }
        }
        Self { g, h, s }
    }

    /// Blocks for row-specific weight matrices.
    pub fn with_row_weights(d: &Design, weights: &[Matrix3<f64>]) -> Self {
        let mut g = Vec::with_capacity(9);
        let mut h = Vec::with_capacity(9);
        let mut s = Matrix3::zeros();
        for a in 0..3 {
            for b in 0..3 {
                let mut scaled = d.d[b].clone();
                let mut zb = d.z.column(b).into_owned();
                for i in 0..d.n {
                    let wab = weights[i][(a, b)];
                    scaled.row_mut(i).scale_mut(wab);
                    zb[i] *= wab;
                }
                g.push(d.d[a].tr_mul(&scaled));
                h.push(d.d[a].tr_mul(&zb));
                s[(a, b)] = d.z.column(a).dot(&zb);
            }
        }
        Self { g, h, s }
    }

    /// Natural magnitude of the objective, used to scale tolerances.
    pub fn scale(&self) -> f64 {
        self.s.trace().abs().max(1e-300)
    }
}

pub(crate) struct Problem<'a> {
    pub blocks: &'a Blocks,
    pub constraints: Option<DMatrix<f64>>,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Solution {
    pub kappa: [f64; 2],
    pub q: DVector<f64>,
    pub active: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub last_move: f64,
    pub boundary: bool,
    pub max_increase: f64,
}

fn clamp_kappa(k: f64) -> (f64, bool) {
    if k.abs() > KAPPA_BOUND {
        (KAPPA_BOUND.copysign(k), true)
    } else {
        (k, false)
    }
}

impl<'a> Problem<'a> {
    pub fn new(blocks: &'a Blocks, design: &Design, convexity: bool) -> Self {
        let constraints = if convexity {
            let a = design.constraint_matrix();
            (a.nrows() > 0).then_some(a)
        } else {
            None
        };
        Self {
            blocks,
            constraints,
            dim: design.dim,
        }
    }

    fn quadratic(&self, kappa: [f64; 2]) -> (DMatrix<f64>, DVector<f64>) {
        let m = [1.0, kappa[0], kappa[1]];
        let mut hm = DMatrix::zeros(self.dim, self.dim);
        let mut c = DVector::zeros(self.dim);
        for a in 0..3 {
            for b in 0..3 {
                hm += self.blocks.g(a, b) * (m[a] * m[b]);
                c += self.blocks.h(a, b) * m[a];
            }
        }
        let hs = (&hm + hm.transpose()) * 0.5;
        (hs, c)
    }

    pub fn objective(&self, kappa: [f64; 2], q: &DVector<f64>) -> f64 {
        let (hm, c) = self.quadratic(kappa);
        self.blocks.s.sum() - 2.0 * c.dot(q) + q.dot(&(&hm * q))
    }

    /// Minimiser over `q` at fixed kappa; `warm` seeds the active set.
    pub fn solve_q(&self, kappa: [f64; 2], warm: &[usize]) -> Result<(DVector<f64>, Vec<usize>)> {
        let (hm, c) = self.quadratic(kappa);
        match &self.constraints {
            None => Ok((qp::solve_unconstrained(&hm, &c)?, Vec::new())),
            Some(a) => {
                let sol = qp::solve(
                    &(&hm * 2.0),
                    &(&c * 2.0),
                    a,
                    &DVector::zeros(a.nrows()),
                    warm,
                )?;
                Ok((sol.x, sol.active))
            }
        }
    }

    /// Exact minimiser over kappa at fixed `q`; a coordinate that leaves
    /// `KAPPA_BOUND` is pinned there and the other re-solved.
    pub fn kappa_step(&self, q: &DVector<f64>, current: [f64; 2]) -> ([f64; 2], bool) {
        let (l, r) = self.kappa_system(q);
        let tiny = 1e-14 * (l[(0, 0)].abs() + l[(1, 1)].abs()).max(1e-300);
        let solved = if l.determinant().abs() > tiny * tiny {
            l.lu().solve(&r).map(|v| [v[0], v[1]])
        } else {
            None
        };
        let mut k = match solved {
            Some(v) if v.iter().all(|x| x.is_finite()) => v,
            _ => {
                // degenerate gradients: update coordinates separately where possible
                let mut k = current;
                for c in 0..2 {
                    if l[(c, c)] > tiny {
                        let other = current[1 - c];
                        k[c] = (r[c] - l[(c, 1 - c)] * other) / l[(c, c)];
                    }
                }
                k
            }
        };
        let mut boundary = false;
        for c in 0..2 {
            let (v, hit) = clamp_kappa(k[c]);
            if hit {
                boundary = true;
                k[c] = v;
                let o = 1 - c;
                if l[(o, o)] > tiny {
                    let (vo, hit_o) = clamp_kappa((r[o] - l[(o, c)] * v) / l[(o, o)]);
                    k[o] = vo;
                    boundary |= hit_o;
                }
            }
        }
        (k, boundary)
    }

    fn kappa_system(&self, q: &DVector<f64>) -> (Matrix2<f64>, Vector2<f64>) {
        let b = self.blocks;
        let quad = |a: usize, c: usize| q.dot(&(b.g(a, c) * q));
        let l = Matrix2::new(quad(1, 1), quad(1, 2), quad(2, 1), quad(2, 2));
        let l = (l + l.transpose()) * 0.5;
        let rhs = |a: usize| (0..3).map(|c| q.dot(b.h(a, c))).sum::<f64>() - quad(a, 0);
        (l, Vector2::new(rhs(1), rhs(2)))
    }

    /// Gradient of the profiled objective `min_q f(kappa, q)` (envelope theorem).
    fn profile_gradient(&self, kappa: [f64; 2], q: &DVector<f64>) -> Vector2<f64> {
        let (l, r) = self.kappa_system(q);
        (l * Vector2::new(kappa[0], kappa[1]) - r) * 2.0
    }

    fn profile(&self, kappa: [f64; 2], warm: &[usize]) -> Result<Point> {
        let (q, active) = self.solve_q(kappa, warm)?;
        let f = self.objective(kappa, &q);
        let g = self.profile_gradient(kappa, &q);
        Ok(Point { kappa, q, active, f, g })
    }

    /// Newton iterations on the profiled objective in kappa, with a
    /// finite-difference Hessian of the exact gradient and Armijo
    /// backtracking; the block-coordinate step is the fallback direction.
    pub fn run(
        &self,
        kappa0: [f64; 2],
        warm: &[usize],
        max_iter: usize,
        tol: f64,
    ) -> Result<Solution> {
        let scale = self.blocks.scale();
        let (k0c, b0) = clamp_kappa(kappa0[0]);
        let (k0m, b1) = clamp_kappa(kappa0[1]);
        let mut boundary = b0 || b1;
        let mut cur = self.profile([k0c, k0m], warm)?;
        let mut max_increase: f64 = 0.0;
        let mut last_move = f64::INFINITY;

        for it in 1..=max_iter {
            let mut dirs: Vec<(Coords, Vector2<f64>)> = Vec::with_capacity(2);
            if let Some(d) = self.newton_direction(&cur) {
                dirs.push((Coords::Alpha, d));
            }
            let (k_bc, hit) = self.kappa_step(&cur.q, cur.kappa);
            let d_bc = Vector2::new(k_bc[0] - cur.kappa[0], k_bc[1] - cur.kappa[1]);
            if hit && dirs.is_empty() {
                boundary = true;
            }
            dirs.push((Coords::Kappa, d_bc));

            let mut next: Option<(Point, bool)> = None;
            for (coords, d) in dirs {
                if let Some(found) = self.line_search(&cur, coords, d)? {
                    next = Some(found);
                    break;
                }
            }
            let knorm = cur.kappa[0].abs().max(cur.kappa[1].abs()).max(1.0);
            let Some((nxt, hit)) = next else {
                // no decrease along either direction: stationary to roundoff
                last_move = 0.0;
                return Ok(self.finish(cur, it, true, last_move, boundary, max_increase));
            };
            boundary |= hit;
            last_move = (nxt.kappa[0] - cur.kappa[0])
                .abs()
                .max((nxt.kappa[1] - cur.kappa[1]).abs())
                / knorm;
            max_increase = max_increase.max((nxt.f - cur.f) / scale);
            let f_change = (cur.f - nxt.f).abs();
            cur = nxt;
            if !cur.kappa.iter().all(|v| v.is_finite()) || !cur.q.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical("non-finite iterate in profiled fit".into()));
            }
            if last_move < tol || (f_change <= 1e-15 * cur.f.abs().max(1e-16 * scale) && last_move < 1e-8) {
                return Ok(self.finish(cur, it, last_move < 1e-8, last_move, boundary, max_increase));
            }
        }
        if last_move < 1e-8 {
            return Ok(self.finish(cur, max_iter, true, last_move, boundary, max_increase));
        }
        Err(Error::NonConvergence {
            iterations: max_iter,
            detail: format!("profiled fit stalled (last relative kappa move {last_move:e})"),
            last: vec![cur.kappa[0], cur.kappa[1]],
        })
    }

    fn finish(
        &self,
        p: Point,
        iterations: usize,
        converged: bool,
        last_move: f64,
        boundary: bool,
        max_increase: f64,
    ) -> Solution {
        let p = if converged { self.polish(p) } else { p };
        let boundary = boundary || p.kappa.iter().any(|k| k.abs() >= KAPPA_BOUND);
        Solution {
            kappa: p.kappa,
            q: p.q,
            active: p.active,
            objective: p.f,
            iterations,
            converged,
            last_move,
            boundary,
            max_increase,
        }
    }

    /// Full Newton steps while the exact gradient keeps shrinking. Near the
    /// optimum objective differences drown in roundoff; the envelope gradient
    /// does not.
    fn polish(&self, mut p: Point) -> Point {
        for _ in 0..8 {
            let Some(d) = self.newton_direction(&p) else { break };
            let a = to_alpha(p.kappa);
            let (kc, hc) = kappa_of_alpha(a[0] + d[0]);
            let (km, hm) = kappa_of_alpha(a[1] + d[1]);
            if hc || hm {
                break;
            }
            let Ok(next) = self.profile([kc, km], &p.active) else { break };
            let worse = next.f - p.f > 1e-12 * (p.f.abs() + self.blocks.scale() * 1e-2);
            if worse || !(alpha_gradient(next.kappa, next.g).norm() < alpha_gradient(p.kappa, p.g).norm()) {
                break;
            }
            p = next;
        }
        p
    }

    /// Modified Newton step in `alpha = 1 / kappa`. Near a vanishing
    /// complementarity the profile behaves like `a / kappa`, which is close to
    /// linear and well scaled in `alpha` but numerically flat in `kappa`.
    fn newton_direction(&self, cur: &Point) -> Option<Vector2<f64>> {
        if cur.kappa.iter().any(|k| k.abs() < 1e-8) {
            return None;
        }
        let alpha = to_alpha(cur.kappa);
        let g0 = alpha_gradient(cur.kappa, cur.g);
        let mut h = Matrix2::zeros();
        for c in 0..2 {
            let step = 1e-5 * alpha[c].abs().max(1e-2);
            let mut ap = alpha;
            let mut am = alpha;
            ap[c] += step;
            am[c] -= step;
            // stay on the same side of zero so both points are finite kappas
            let floor = 1.0 / KAPPA_BOUND;
            let (lo, hi) = if alpha[c] > 0.0 { (floor, f64::INFINITY) } else { (f64::NEG_INFINITY, -floor) };
            am[c] = am[c].clamp(lo, hi);
            ap[c] = ap[c].clamp(lo, hi);
            let width = ap[c] - am[c];
            if !(width > 0.0) {
                return None;
            }
            let kp = [1.0 / ap[0], 1.0 / ap[1]];
            let km = [1.0 / am[0], 1.0 / am[1]];
            let gp = alpha_gradient(kp, self.profile(kp, &cur.active).ok()?.g);
            let gm = alpha_gradient(km, self.profile(km, &cur.active).ok()?.g);
            h.set_column(c, &((gp - gm) / width));
        }
        let h = (h + h.transpose()) * 0.5;
        let mut eig = h.symmetric_eigen();
        let top = eig.eigenvalues.amax();
        if !(top > 0.0) || !top.is_finite() {
            return None;
        }
        // indefinite curvature away from the optimum: flip negative eigenvalues
        for v in eig.eigenvalues.iter_mut() {
            *v = v.abs().max(1e-10 * top);
        }
        let d = -(eig.recompose().try_inverse()? * g0);
        d.iter().all(|v| v.is_finite()).then_some(d)
    }

    /// Armijo backtracking along `d`, a direction in `coords`; `None` when
    /// no decrease is found.
    fn line_search(&self, cur: &Point, coords: Coords, d: Vector2<f64>) -> Result<Option<(Point, bool)>> {
        let slope = match coords {
            Coords::Kappa => cur.g.dot(&d),
            Coords::Alpha => alpha_gradient(cur.kappa, cur.g).dot(&d),
        };
        if !(slope < 0.0) {
            return Ok(None);
        }
        let alpha = to_alpha(cur.kappa);
        let mut t = 1.0;
        for _ in 0..40 {
            let (k, hit) = match coords {
                Coords::Kappa => {
                    let (kc, hc) = clamp_kappa(cur.kappa[0] + t * d[0]);
                    let (km, hm) = clamp_kappa(cur.kappa[1] + t * d[1]);
                    ([kc, km], hc || hm)
                }
                Coords::Alpha => {
                    let (kc, hc) = kappa_of_alpha(alpha[0] + t * d[0]);
                    let (km, hm) = kappa_of_alpha(alpha[1] + t * d[1]);
                    ([kc, km], hc || hm)
                }
            };
            if k == cur.kappa {
                return Ok(None);
            }
            if let Ok(p) = self.profile(k, &cur.active) {
                if p.f <= cur.f + 1e-4 * t * slope && p.f < cur.f {
                    return Ok(Some((p, hit)));
                }
                // full step flat to roundoff: the exact gradient still ranks points
                let flat = (p.f - cur.f).abs() <= 1e-14 * (cur.f.abs() + self.blocks.scale());
                if t == 1.0 && flat && p.g.norm() < 0.5 * cur.g.norm() {
                    return Ok(Some((p, hit)));
                }
            }
            t *= 0.5;
        }
        Ok(None)
    }
}

#[derive(Clone, Copy, Debug)]
enum Coords {
    Kappa,
    Alpha,
}

fn to_alpha(kappa: [f64; 2]) -> [f64; 2] {
    [1.0 / kappa[0], 1.0 / kappa[1]]
}

/// `d f / d alpha = -kappa^2 d f / d kappa`.
fn alpha_gradient(kappa: [f64; 2], g: Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-kappa[0] * kappa[0] * g[0], -kappa[1] * kappa[1] * g[1])
}

/// Kappa of an alpha, with `|alpha|` held at `1 / KAPPA_BOUND` or more.
fn kappa_of_alpha(a: f64) -> (f64, bool) {
    let floor = 1.0 / KAPPA_BOUND;
    if a.abs() < floor {
        let sign = if a < 0.0 { -1.0 } else { 1.0 };
        (sign * KAPPA_BOUND, true)
    } else {
        (1.0 / a, false)
    }
}

struct Point {
    kappa: [f64; 2],
    q: DVector<f64>,
    active: Vec<usize>,
    f: f64,
    g: Vector2<f64>,
}
