//! Discrete Monge-Kantorovich matching with a bilinear surplus.
//!
//! Workers and jobs carry unit mass each, so the optimal coupling is a
//! permutation. The solver is a shortest-augmenting-path (Hungarian /
//! Jonker-Volgenant style) method that maintains feasible dual prices
//! throughout; the prices it ends with are the equilibrium wages and
//! profits.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Surplus technology `s(x, y) = x'Ay + x'b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductionTech {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl ProductionTech {
    pub const DET_TOL: f64 = 1e-12;

    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let d = a.nrows();
        if d == 0 {
            return Err(Error::InvalidInput("technology dimension must be >= 1".into()));
        }
        if a.ncols() != d {
            return Err(Error::dimension(
                "complementarity matrix A",
                format!("{d}x{d}"),
                format!("{}x{}", a.nrows(), a.ncols()),
            ));
        }
        if b.len() != d {
            return Err(Error::dimension("productivity vector b", d, b.len()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("production technology".into()));
        }
        let det = a.determinant();
        if det.abs() <= Self::DET_TOL {
            return Err(Error::Domain(format!(
                "complementarity matrix must be invertible (|det A| = {:e})",
                det.abs()
            )));
        }
        Ok(Self { a, b })
    }

    /// Two-task technology with `A = diag(alpha_cc, alpha_mm)`.
    pub fn diagonal(alpha_cc: f64, alpha_mm: f64, beta_c: f64, beta_m: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[alpha_cc, 0.0, 0.0, alpha_mm]),
            DVector::from_row_slice(&[beta_c, beta_m]),
        )
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.a[(i, j)] == 0.0))
    }

    /// Surplus of a single pair.
    pub fn surplus(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            let mut ay = 0.0;
            for j in 0..d {
                ay += self.a[(i, j)] * y[j];
            }
            s += x[i] * (ay + self.b[i]);
        }
        s
    }

    /// Same technology with the linear productivity term removed.
    pub fn without_linear(&self) -> Self {
        Self {
            a: self.a.clone(),
            b: DVector::zeros(self.dim()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurplusMatrix {
    values: DMatrix<f64>,
}

impl SurplusMatrix {
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if let Some(((i, j), _)) = values
            .iter()
            .enumerate()
            .map(|(k, v)| ((k % values.nrows(), k / values.nrows()), v))
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::NonFinite(format!("surplus entry ({i}, {j})")));
        }
        Ok(Self { values })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// `S[i][j] = x_i' A y_j + x_i' b`.
pub fn build_surplus_matrix(
    workers: &DMatrix<f64>,
    jobs: &DMatrix<f64>,
    tech: &ProductionTech,
) -> Result<SurplusMatrix> {
    let d = tech.dim();
    if workers.ncols() != d {
        return Err(Error::dimension(
            "worker characteristics",
            format!("n x {d}"),
            format!("{} x {}", workers.nrows(), workers.ncols()),
        ));
    }
    if jobs.ncols() != d {
        return Err(Error::dimension(
            "job characteristics",
            format!("m x {d}"),
            format!("{} x {}", jobs.nrows(), jobs.ncols()),
        ));
    }
    if workers.iter().chain(jobs.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("worker or job characteristics".into()));
    }
    // (X A) Y' + (X b) 1'
    let xa = workers * tech.a();
    let xb = workers * tech.b();
    let mut s = xa * jobs.transpose();
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            s[(i, j)] += xb[i];
        }
    }
    SurplusMatrix::from_matrix(s)
}

/// Optimal permutation coupling with its dual potentials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    /// `assignment[i]` is the job matched to worker `i`.
    pub assignment: Vec<usize>,
    pub worker_dual: Vec<f64>,
    pub firm_dual: Vec<f64>,
    pub total_surplus: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DualNormalization {
    AnchorAtIndex(usize),
    ZeroMean,
}

/// Residual checks of the coupling invariants against a surplus matrix.
#[derive(Clone, Copy, Debug)]
pub struct DualityCheck {
    /// `sum w + sum v - total_surplus`.
    pub duality_gap: f64,
    /// `max_{i,j} S_ij - w_i - v_j` (positive means a blocking pair).
    pub max_stability_violation: f64,
    /// `max_i |w_i + v_{T(i)} - S_{i,T(i)}|`.
    pub max_matched_slack: f64,
    pub is_permutation: bool,
}

impl DualityCheck {
    pub fn holds(&self, tol: f64, total: f64) -> bool {
        self.is_permutation
            && self.duality_gap.abs() <= tol * (1.0 + total.abs())
            && self.max_stability_violation <= tol
            && self.max_matched_slack <= tol
    }
}

impl Coupling {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Dense 0/1 plan matrix; rows are workers.
    pub fn plan_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut p = DMatrix::zeros(n, n);
        for (i, &j) in self.assignment.iter().enumerate() {
            p[(i, j)] = 1.0;
        }
        p
    }

    pub fn check(&self, s: &SurplusMatrix) -> DualityCheck {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut is_permutation = s.nrows() == n && s.ncols() == n;
        for &j in &self.assignment {
            if j >= n || seen[j] {
                is_permutation = false;
                break;
            }
            seen[j] = true;
        }
        let dual_sum: f64 = self.worker_dual.iter().sum::<f64>() + self.firm_dual.iter().sum::<f64>();
        let mut max_violation = f64::NEG_INFINITY;
        let mut max_slack: f64 = 0.0;
        if is_permutation {
            for i in 0..n {
                for j in 0..n {
                    let gap = s.get(i, j) - self.worker_dual[i] - self.firm_dual[j];
                    max_violation = max_violation.max(gap);
                }
                let j = self.assignment[i];
                max_slack = max_slack
                    .max((self.worker_dual[i] + self.firm_dual[j] - s.get(i, j)).abs());
            }
        }
        DualityCheck {
            duality_gap: dual_sum - self.total_surplus,
            max_stability_violation: max_violation,
            max_matched_slack: max_slack,
            is_permutation,
        }
    }

    /// Shifts worker duals so the normalization holds, compensating on the
    /// firm side so stability and strong duality are unchanged.
    pub fn normalized(&self, norm: DualNormalization) -> Result<Coupling> {
        let n = self.len();
        let shift = match norm {
            DualNormalization::AnchorAtIndex(i0) => {
                if i0 >= n {
                    return Err(Error::InvalidInput(format!(
                        "anchor index {i0} out of range for {n} workers"
                    )));
                }
                self.worker_dual[i0]
            }
            DualNormalization::ZeroMean => {
                if n == 0 {
                    0.0
                } else {
                    self.worker_dual.iter().sum::<f64>() / n as f64
                }
            }
        };
        let mut out = self.clone();
        for w in &mut out.worker_dual {
            *w -= shift;
        }
        for v in &mut out.firm_dual {
            *v += shift;
        }
        if let DualNormalization::AnchorAtIndex(i0) = norm {
            out.worker_dual[i0] = 0.0;
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["worker_index", "job_index", "wage_dual", "profit_dual"])?;
        for (i, &j) in self.assignment.iter().enumerate() {
            w.write_record([
                i.to_string(),
                j.to_string(),
                self.worker_dual[i].to_string(),
                self.firm_dual[j].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Maximum-surplus permutation with dual prices.
///
/// Among equally optimal permutations the lexicographically smallest
/// worker-to-job map is returned.
pub fn solve_assignment(s: &SurplusMatrix) -> Result<Coupling> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::dimension(
            "surplus matrix (must be square)",
            format!("{n}x{n}"),
            format!("{}x{}", n, s.ncols()),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty surplus matrix".into()));
    }
    if s.as_matrix().iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("surplus matrix contains NaN".into()));
    }

    // Minimise C = max(S) - S >= 0; the constant shift leaves the plan unchanged.
    let smax = s.as_matrix().max();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = smax - s.get(i, j);
        }
    }
    let (row_to_col, u, v) = shortest_augmenting_path(&cost, n);

    // u_i + v_j <= C_ij  <=>  S_ij <= (-u_i) + (smax - v_j)
    let worker_dual: Vec<f64> = u.iter().map(|x| -x).collect();
    let firm_dual: Vec<f64> = v.iter().map(|x| smax - x).collect();

    let scale = s.as_matrix().amax().max(1.0);
    let tol = 1e-10 * scale;
    let mut assignment = row_to_col;
    lexicographic_tie_break(s, &worker_dual, &firm_dual, tol, &mut assignment);

    let total_surplus = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| s.get(i, j))
        .sum();
    Ok(Coupling {
        assignment,
        worker_dual,
        firm_dual,
        total_surplus,
    })
}

/// Row-by-row shortest augmenting paths on a dense n x n cost matrix.
/// Column prices start at the column minima (the classic column reduction).
/// Returns (row -> col, row potentials u, column potentials v) with
/// `u_i + v_j <= C_ij`, tight on the returned matching.
fn shortest_augmenting_path(cost: &[f64], n: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    const NONE: usize = usize::MAX;
    // 1-based internals, index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    for j in 1..=n {
        v[j] = (0..n).map(|i| cost[i * n + j - 1]).fold(f64::INFINITY, f64::min);
    }
    let mut col_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for row in 1..=n {
        col_row[0] = row;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let crow = &cost[(i0 - 1) * n..i0 * n];
            let ui0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = NONE;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = crow[j - 1] - ui0 - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            debug_assert!(j1 != NONE);
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[col_row[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Rewrites an optimal matching into the lexicographically smallest perfect
/// matching of the tight-edge graph, i.e. the smallest optimal permutation.
fn lexicographic_tie_break(
    s: &SurplusMatrix,
    w: &[f64],
    v: &[f64],
    tol: f64,
    row_to_col: &mut [usize],
) {
    let n = row_to_col.len();
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| w[i] + v[j] - s.get(i, j) <= tol || j == row_to_col[i])
                .collect()
        })
        .collect();
    // Generic data has a single tight edge per row; nothing to do then.
    if tight.iter().all(|t| t.len() == 1) {
        return;
    }
    let mut col_to_row = vec![0usize; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    let mut col_fixed = vec![false; n];
    let mut parent = vec![usize::MAX; n];
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();

    for i in 0..n {
        let target = row_to_col[i];
        for &j in &tight[i] {
            if j == target {
                break;
            }
            if col_fixed[j] {
                continue;
            }
            // Row r gives up j and must reach `target` by an alternating path.
            let r = col_to_row[j];
            visited.iter_mut().for_each(|b| *b = false);
            queue.clear();
            queue.push_back(r);
            let mut found = false;
            'bfs: while let Some(q) = queue.pop_front() {
                for &c in &tight[q] {
                    if col_fixed[c] || c == j || visited[c] {
                        continue;
                    }
                    visited[c] = true;
                    parent[c] = q;
                    if c == target {
                        found = true;
                        break 'bfs;
                    }
                    queue.push_back(col_to_row[c]);
                }
            }
            if found {
                let mut c = target;
                loop {
                    let q = parent[c];
                    let old = row_to_col[q];
                    row_to_col[q] = c;
                    col_to_row[c] = q;
                    if q == r {
                        break;
                    }
                    c = old;
                }
                row_to_col[i] = j;
                col_to_row[j] = i;
                break;
            }
        }
        col_fixed[row_to_col[i]] = true;
    }
}

/// Wages (worker duals) under the chosen normalization.
pub fn wages_from_dual(c: &Coupling, norm: DualNormalization) -> Result<Vec<f64>> {
    Ok(c.normalized(norm)?.worker_dual)
}

/// Row i of the result is the characteristic vector of worker i's partner.
pub fn assignment_map(c: &Coupling, jobs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = c.len();
    if jobs.nrows() != n {
        return Err(Error::dimension("job characteristics rows", n, jobs.nrows()));
    }
    let d = jobs.ncols();
    let mut out = DMatrix::zeros(n, d);
    for (i, &j) in c.assignment.iter().enumerate() {
        if j >= n {
            return Err(Error::InvalidInput(format!("assignment index {j} out of range")));
        }
        for k in 0..d {
            out[(i, k)] = jobs[(j, k)];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perms(n: usize) -> Vec<Vec<usize>> {
        // lexicographic order
        fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
            let n = used.len();
            if prefix.len() == n {
                out.push(prefix.clone());
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    prefix.push(j);
                    rec(prefix, used, out);
                    prefix.pop();
                    used[j] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), &mut vec![false; n], &mut out);
        out
    }

    #[test]
    fn identity_technology_inner_product() {
        let tech = ProductionTech::diagonal(1.0, 1.0, 0.0, 0.0).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let y = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let s = build_surplus_matrix(&x, &y, &tech).unwrap();
        assert_eq!(s.get(0, 0), 11.0);
    }

    #[test]
    fn reference_technology_at_unit_point() {
        let tech = ProductionTech::diagonal(0.5, 0.2, 1.7, -0.4).unwrap();
        let ones = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let s = build_surplus_matrix(&ones, &ones, &tech).unwrap();
        assert!((s.get(0, 0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn surplus_matches_pairwise_loop() {
        let a = DMatrix::from_row_slice(2, 2, &[0.7, -0.3, 0.2, 1.1]);
        let b = DVector::from_row_slice(&[0.4, -1.3]);
        let tech = ProductionTech::new(a.clone(), b.clone()).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 2.0, -1.5, 0.3, 0.8, -0.9]);
        let y = DMatrix::from_row_slice(3, 2, &[1.2, -0.4, 0.0, 0.6, -2.2, 1.9]);
        let s = build_surplus_matrix(&x, &y, &tech).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut e = 0.0;
                for p in 0..2 {
                    for q in 0..2 {
                        e += x[(i, p)] * a[(p, q)] * y[(j, q)];
                    }
                    e += x[(i, p)] * b[p];
                }
                assert!((s.get(i, j) - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_errors_name_the_offender() {
        let tech = ProductionTech::diagonal(1.0, 1.0, 0.0, 0.0).unwrap();
        let x = DMatrix::zeros(3, 3);
        let y = DMatrix::zeros(3, 2);
        let err = build_surplus_matrix(&x, &y, &tech).unwrap_err();
        assert!(err.to_string().contains("worker characteristics"), "{err}");
        assert!(err.to_string().contains("3 x 3"));
    }

    #[test]
    fn singular_technology_rejected() {
        assert!(ProductionTech::diagonal(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn dominant_diagonal_is_identity() {
        let mut m = DMatrix::zeros(3, 3);
        for i in 0..3 {
            m[(i, i)] = 10.0;
        }
        let c = solve_assignment(&SurplusMatrix::from_matrix(m.clone()).unwrap()).unwrap();
        assert_eq!(c.assignment, vec![0, 1, 2]);
        assert_eq!(c.total_surplus, 30.0);
        assert!(c.check(&SurplusMatrix::from_matrix(m).unwrap()).holds(1e-9, 30.0));
    }

    #[test]
    fn non_square_and_nan_are_errors() {
        let s = SurplusMatrix::from_matrix(DMatrix::zeros(2, 3)).unwrap();
        assert!(solve_assignment(&s).is_err());
        assert!(SurplusMatrix::from_matrix(DMatrix::from_element(2, 2, f64::NAN)).is_err());
    }

    #[test]
    fn ties_take_lexicographically_smallest_permutation() {
        // every permutation is optimal
        let s = SurplusMatrix::from_matrix(DMatrix::from_element(4, 4, 2.5)).unwrap();
        let c = solve_assignment(&s).unwrap();
        assert_eq!(c.assignment, vec![0, 1, 2, 3]);

        // integer instances with ties: compare with first maximiser in lex order
        let mut state = 12345u64;
        for _ in 0..200 {
            let n = 2 + (state % 4) as usize;
            let mut m = DMatrix::zeros(n, n);
            for v in m.iter_mut() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = ((state >> 33) % 3) as f64;
            }
            let s = SurplusMatrix::from_matrix(m.clone()).unwrap();
            let c = solve_assignment(&s).unwrap();
            let mut best = f64::NEG_INFINITY;
            let mut best_perm = Vec::new();
            for p in perms(n) {
                let t: f64 = p.iter().enumerate().map(|(i, &j)| m[(i, j)]).sum();
                if t > best {
                    best = t;
                    best_perm = p;
                }
            }
            assert_eq!(c.total_surplus, best);
            assert_eq!(c.assignment, best_perm, "matrix {m}");
        }
    }

    #[test]
    fn normalizations() {
        let m = DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 0.5, 2.0, 4.0, 1.0, 0.0, 1.0, 5.0]);
        let s = SurplusMatrix::from_matrix(m).unwrap();
        let c = solve_assignment(&s).unwrap();
        let zm = wages_from_dual(&c, DualNormalization::ZeroMean).unwrap();
        assert!(zm.iter().sum::<f64>().abs() < 1e-12);
        let an = wages_from_dual(&c, DualNormalization::AnchorAtIndex(0)).unwrap();
        assert_eq!(an[0], 0.0);
        let shifted = c.normalized(DualNormalization::ZeroMean).unwrap();
        assert!(shifted.check(&s).holds(1e-10, shifted.total_surplus));
        assert!(wages_from_dual(&c, DualNormalization::AnchorAtIndex(3)).is_err());
    }

    #[test]
    fn assignment_map_permutes_rows() {
        let jobs = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let id = Coupling {
            assignment: vec![0, 1],
            worker_dual: vec![0.0; 2],
            firm_dual: vec![0.0; 2],
            total_surplus: 0.0,
        };
        assert_eq!(assignment_map(&id, &jobs).unwrap(), jobs);
        let swap = Coupling {
            assignment: vec![1, 0],
            ..id
        };
        let out = assignment_map(&swap, &jobs).unwrap();
        assert_eq!(out, DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 1.0, 2.0]));
    }

    #[test]
    fn coupling_csv_header() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let c = solve_assignment(&SurplusMatrix::from_matrix(m).unwrap()).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("worker_index,job_index,wage_dual,profit_dual\n0,0,"));
    }
}
