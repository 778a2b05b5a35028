//! The adversary: maximize a Bayes risk `r . pi` over priors on a grid.
//!
//! The feasible set is `{pi >= 0, sum(pi) = 1, A pi <= c}`. The solver is a
//! dense two-phase tableau simplex with Bland's rule, which is deterministic
//! and adequate for the few constraint rows that occur in practice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{constraint_matrix, Grid, MomentConstraint, CONSTRAINT_TOL};

/// Feasibility and optimality tolerance.
pub const LP_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    #[serde(default)]
    pub rows: Vec<Vec<f64>>,
    #[serde(default)]
    pub bounds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub weights: Vec<f64>,
    pub value: f64,
    /// Moment rows that hold with equality at the solution.
    pub active: Vec<usize>,
}

impl LpProblem {
    pub fn new(objective: Vec<f64>, rows: Vec<Vec<f64>>, bounds: Vec<f64>) -> Result<Self> {
        let p = Self {
            objective,
            rows,
            bounds,
        };
        p.validate()?;
        Ok(p)
    }

    /// Objective `risks` with the constraint rows evaluated on `grid`.
    pub fn on_grid(risks: Vec<f64>, constraints: &[MomentConstraint], grid: &Grid) -> Result<Self> {
        let (rows, bounds) = constraint_matrix(constraints, grid)?;
        Self::new(risks, rows, bounds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.objective.len();
        if n == 0 {
            return Err(Error::InvalidProblem("no variables".into()));
        }
        if self.rows.len() != self.bounds.len() {
            return Err(Error::InvalidProblem(format!(
                "{} rows but {} bounds",
                self.rows.len(),
                self.bounds.len()
            )));
        }
        if let Some(k) = self.rows.iter().position(|r| r.len() != n) {
            return Err(Error::InvalidProblem(format!("row {k} does not have {n} entries")));
        }
        let finite = self.objective.iter().chain(self.bounds.iter()).chain(self.rows.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidProblem("non-finite entry".into()));
        }
        Ok(())
    }

    pub fn variables(&self) -> usize {
        self.objective.len()
    }

    pub fn value_at(&self, weights: &[f64]) -> f64 {
        dot(&self.objective, weights)
    }

    fn active_rows(&self, weights: &[f64]) -> Vec<usize> {
        self.rows
            .iter()
            .zip(&self.bounds)
            .enumerate()
            .filter(|(_, (row, c))| (dot(row, weights) - **c).abs() <= 1e-7 * (1.0 + c.abs()))
            .map(|(k, _)| k)
            .collect()
    }

    /// Rows that no prior on this grid can satisfy on their own; if there are
    /// none, every row (the conflict is joint).
    fn infeasibility_report(&self, phase_one_violated: Vec<usize>) -> Error {
        let alone: Vec<usize> = self
            .rows
            .iter()
            .zip(&self.bounds)
            .enumerate()
            .filter(|(_, (row, c))| row.iter().copied().fold(f64::INFINITY, f64::min) > **c + CONSTRAINT_TOL)
            .map(|(k, _)| k)
            .collect();
        let violated = if !alone.is_empty() {
            alone
        } else if !phase_one_violated.is_empty() {
            phase_one_violated
        } else {
            (0..self.rows.len()).collect()
        };
        Error::Infeasible { violated }
    }

    fn solution(&self, mut weights: Vec<f64>) -> LpSolution {
        for w in weights.iter_mut() {
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        LpSolution {
            value: self.value_at(&weights),
            active: self.active_rows(&weights),
            weights,
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows` constraint rows followed by one objective row, each `cols + 1`
    /// wide with the right-hand side last.
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.cols + 1) + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.cols + 1;
        &mut self.data[i * w..(i + 1) * w]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.cols + 1;
        let p = self.at(r, c);
        for v in self.row_mut(r) {
            *v /= p;
        }
        let (head, tail) = self.data.split_at_mut(r * w);
        let (prow, after) = tail.split_at_mut(w);
        for row in head.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Sets the objective row to `-cost` reduced against the current basis.
    fn set_objective(&mut self, cost: &[f64]) {
        let obj = self.rows;
        for j in 0..=self.cols {
            self.data[obj * (self.cols + 1) + j] = if j < self.cols { -cost[j] } else { 0.0 };
        }
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let w = self.cols + 1;
                for j in 0..=self.cols {
                    self.data[obj * w + j] += cb * self.data[i * w + j];
                }
            }
        }
    }

    /// Maximizes the objective row with Bland's rule over columns `< allowed`.
    fn optimize(&mut self, allowed: usize, opt_tol: f64) -> Result<()> {
        let max_pivots = 50 * (self.rows + self.cols) + 1000;
        for _ in 0..max_pivots {
            let obj = self.rows;
            let Some(enter) = (0..allowed).find(|&j| self.at(obj, j) < -opt_tol) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, enter);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-14 || (ratio <= br + 1e-14 && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            // The feasible set is bounded, so a missing ratio only happens
            // through roundoff on an already optimal column.
            let Some((r, _)) = leave else {
                return Ok(());
            };
            self.pivot(r, enter);
        }
        Err(Error::InvalidProblem("simplex pivot limit reached".into()))
    }
}

/// Least-favorable prior: the maximizer of `r . pi` over the constrained
/// simplex.
pub fn solve_least_favorable(p: &LpProblem) -> Result<LpSolution> {
    p.validate()?;
    let n = p.variables();
    let k = p.rows.len();
    let m = k + 1;
    // Columns: pi (n), slacks (k), artificials (one per row that needs one).
    let needs_art: Vec<bool> = (0..m).map(|i| i == k || p.bounds[i] < 0.0).collect();
    let n_art = needs_art.iter().filter(|b| **b).count();
    let cols = n + k + n_art;
    let w = cols + 1;
    let mut t = Tableau {
        rows: m,
        cols,
        data: vec![0.0; (m + 1) * w],
        basis: vec![0; m],
    };
    let mut art = n + k;
    for i in 0..m {
        let sign = if i < k && p.bounds[i] < 0.0 { -1.0 } else { 1.0 };
        let row = t.row_mut(i);
        if i < k {
            for (dst, a) in row[..n].iter_mut().zip(&p.rows[i]) {
                *dst = sign * a;
            }
            row[n + i] = sign;
            row[cols] = sign * p.bounds[i];
        } else {
            row[..n].iter_mut().for_each(|v| *v = 1.0);
            row[cols] = 1.0;
        }
        if needs_art[i] {
            row[art] = 1.0;
            t.basis[i] = art;
            art += 1;
        } else {
            t.basis[i] = n + i;
        }
    }

    if n_art > 0 {
        let mut cost = vec![0.0; cols];
        cost[n + k..].iter_mut().for_each(|c| *c = -1.0);
        t.set_objective(&cost);
        t.optimize(n + k, 1e-12)?;
        let infeasibility: f64 = (0..m).filter(|&i| t.basis[i] >= n + k).map(|i| t.rhs(i)).sum();
        if infeasibility > LP_TOL {
            let violated = (0..m)
                .filter(|&i| t.basis[i] >= n + k && t.rhs(i) > LP_TOL)
                .filter_map(|i| {
                    let a = t.basis[i] - n - k;
                    // Map the artificial back to its constraint row.
                    (0..m).filter(|&r| needs_art[r]).nth(a).filter(|&r| r < k)
                })
                .collect();
            return Err(p.infeasibility_report(violated));
        }
        // Drive zero-level artificials out of the basis; drop redundant rows.
        let mut i = 0;
        while i < t.rows {
            if t.basis[i] >= n + k {
                if let Some(j) = (0..n + k).find(|&j| t.at(i, j).abs() > 1e-9) {
                    t.pivot(i, j);
                    i += 1;
                } else {
                    remove_row(&mut t, i);
                }
            } else {
                i += 1;
            }
        }
    }

    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&p.objective);
    t.set_objective(&cost);
    // Reduced costs get a tighter test than feasibility: a 1e-9 slack on a
    // near-tied column can cost up to 1e-9 of objective.
    let scale = p.objective.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    t.optimize(n + k, 1e-12 * scale)?;

    let mut weights = vec![0.0; n];
    for i in 0..t.rows {
        if t.basis[i] < n {
            weights[t.basis[i]] = t.rhs(i);
        }
    }
    Ok(p.solution(weights))
}

fn remove_row(t: &mut Tableau, i: usize) {
    let w = t.cols + 1;
    t.data.drain(i * w..(i + 1) * w);
    t.basis.remove(i);
    t.rows -= 1;
}

/// Largest problem the enumeration oracle accepts.
pub const BRUTE_MAX_VARIABLES: usize = 10;
pub const BRUTE_MAX_ROWS: usize = 4;

/// Reference solver: enumerates every basic feasible solution.
pub fn brute_force_lfp(p: &LpProblem) -> Result<LpSolution> {
    p.validate()?;
    let n = p.variables();
    let k = p.rows.len();
    if n > BRUTE_MAX_VARIABLES || k > BRUTE_MAX_ROWS {
        return Err(Error::SizeLimit(format!(
            "{n} variables and {k} rows (limits {BRUTE_MAX_VARIABLES}, {BRUTE_MAX_ROWS})"
        )));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for size in 1..=(k + 1).min(n) {
        for support in combinations(n, size) {
            for active in combinations(k, size - 1) {
                let Some(x) = vertex(p, &support, &active) else { continue };
                let mut weights = vec![0.0; n];
                for (s, v) in support.iter().zip(&x) {
                    weights[*s] = *v;
                }
                if weights.iter().any(|w| *w < -1e-12) {
                    continue;
                }
                let feasible = p
                    .rows
                    .iter()
                    .zip(&p.bounds)
                    .all(|(row, c)| dot(row, &weights) <= c + LP_TOL);
                if !feasible {
                    continue;
                }
                let value = p.value_at(&weights);
                if best.as_ref().is_none_or(|(b, _)| value > *b + 1e-13) {
                    best = Some((value, weights));
                }
            }
        }
    }
    match best {
        Some((_, weights)) => Ok(p.solution(weights)),
        None => Err(p.infeasibility_report(Vec::new())),
    }
}

/// Solves `sum_s pi_s = 1` and `sum_s A_ks pi_s = c_k` for `k` in `active`.
fn vertex(p: &LpProblem, support: &[usize], active: &[usize]) -> Option<Vec<f64>> {
    let s = support.len();
    let mut a = vec![vec![0.0; s + 1]; s];
    for (j, &col) in support.iter().enumerate() {
        a[0][j] = 1.0;
        for (i, &row) in active.iter().enumerate() {
            a[i + 1][j] = p.rows[row][col];
        }
    }
    a[0][s] = 1.0;
    for (i, &row) in active.iter().enumerate() {
        a[i + 1][s] = p.bounds[row];
    }
    solve_dense(a)
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let s = a.len();
    for c in 0..s {
        let piv = (c..s).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, piv);
        for i in 0..s {
            if i != c {
                let f = a[i][c] / a[c][c];
                if f != 0.0 {
                    for j in c..=s {
                        a[i][j] -= f * a[c][j];
                    }
                }
            }
        }
    }
    Some((0..s).map(|i| a[i][s] / a[i][i]).collect())
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn mean_problem(objective: Vec<f64>) -> LpProblem {
        let means = vec![0.1, 0.5, 0.9];
        LpProblem::new(objective, vec![means.clone(), means.iter().map(|m| -m).collect()], vec![0.3, -0.3]).unwrap()
    }

    #[test]
    fn unconstrained_picks_largest_coefficient() {
        let p = LpProblem::new(vec![1.0, 2.0, 3.0], vec![], vec![]).unwrap();
        for sol in [solve_least_favorable(&p).unwrap(), brute_force_lfp(&p).unwrap()] {
            assert_eq!(sol.weights, vec![0.0, 0.0, 1.0]);
            assert_eq!(sol.value, 3.0);
        }
    }

    #[test]
    fn mean_equality_vertex() {
        let p = mean_problem(vec![0.0, 0.0, 1.0]);
        for sol in [solve_least_favorable(&p).unwrap(), brute_force_lfp(&p).unwrap()] {
            assert!((sol.weights[0] - 0.75).abs() < 1e-12);
            assert!(sol.weights[1].abs() < 1e-12);
            assert!((sol.weights[2] - 0.25).abs() < 1e-12);
            assert!((sol.value - 0.25).abs() < 1e-12);
            assert_eq!(sol.active, vec![0, 1]);
        }
    }

    #[test]
    fn infeasible_single_point() {
        let p = LpProblem::new(vec![5.0], vec![vec![0.9], vec![-0.9]], vec![0.3, -0.3]).unwrap();
        let err = solve_least_favorable(&p).unwrap_err();
        assert!(matches!(err, Error::Infeasible { ref violated } if violated == &vec![0]), "{err}");
        assert!(matches!(brute_force_lfp(&p), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn ties_and_singletons() {
        let p = LpProblem::new(vec![1.0, 1.0], vec![], vec![]).unwrap();
        assert_eq!(solve_least_favorable(&p).unwrap().value, 1.0);
        assert_eq!(brute_force_lfp(&p).unwrap().value, 1.0);
        let p = LpProblem::new(vec![0.4], vec![], vec![]).unwrap();
        assert_eq!(solve_least_favorable(&p).unwrap().weights, vec![1.0]);
        assert_eq!(brute_force_lfp(&p).unwrap().weights, vec![1.0]);
    }

    #[test]
    fn size_limit() {
        let p = LpProblem::new(vec![0.0; 11], vec![], vec![]).unwrap();
        assert!(matches!(brute_force_lfp(&p), Err(Error::SizeLimit(_))));
    }

    #[test]
    fn malformed_problems_rejected() {
        assert!(LpProblem::new(vec![], vec![], vec![]).is_err());
        assert!(LpProblem::new(vec![1.0], vec![vec![1.0, 2.0]], vec![0.0]).is_err());
        assert!(LpProblem::new(vec![f64::NAN], vec![], vec![]).is_err());
    }

    #[test]
    fn deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let obj: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let row: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let p = LpProblem::new(obj, vec![row], vec![0.2]).unwrap();
        assert_eq!(solve_least_favorable(&p).unwrap(), solve_least_favorable(&p).unwrap());
    }
}
