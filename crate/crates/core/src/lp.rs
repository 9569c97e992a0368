//! Bounded-variable primal simplex with an explicit dense basis inverse.
//!
//! Rows are turned into equalities with one slack per row. Phase one adds an
//! artificial column for every row whose slack cannot absorb the initial
//! residual and minimizes their sum; phase two fixes the artificials at zero
//! and minimizes the real objective from the same basis. Dantzig pricing is
//! used until a run of degenerate pivots trips, then Bland's rule takes over
//! until the objective moves again.

use thiserror::Error;

use crate::mip::{MipInstance, Sense};
use crate::util::{Clock, ClockMode};

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PRIMAL_TOL: f64 = 1e-7;
const REFACTOR_EVERY: usize = 50;
const DEGENERATE_RUN: usize = 30;
const MAX_REFACTOR_RETRIES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("numerical failure in simplex: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult {
    pub status: LpStatus,
    /// Structural variable values (empty when infeasible).
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Column-major copy of an instance's constraint matrix, reusable across
/// solves that differ only in variable bounds.
#[derive(Debug, Clone)]
pub struct LpModel {
    n: usize,
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    slack_lb: Vec<f64>,
    slack_ub: Vec<f64>,
    cost: Vec<f64>,
    nnz: usize,
}

impl LpModel {
    pub fn from_instance(inst: &MipInstance) -> Self {
        let n = inst.num_vars();
        let m = inst.num_rows();
        let mut cols = vec![Vec::new(); n];
        let mut slack_lb = Vec::with_capacity(m);
        let mut slack_ub = Vec::with_capacity(m);
        for (i, row) in inst.rows.iter().enumerate() {
            for &(j, a) in &row.terms {
                if a != 0.0 {
                    cols[j].push((i, a));
                }
            }
            let (lo, hi) = match row.sense {
                Sense::LE => (0.0, f64::INFINITY),
                Sense::GE => (f64::NEG_INFINITY, 0.0),
                Sense::EQ => (0.0, 0.0),
            };
            slack_lb.push(lo);
            slack_ub.push(hi);
        }
        let nnz = cols.iter().map(Vec::len).sum();
        LpModel {
            n,
            m,
            cols,
            rhs: inst.rows.iter().map(|r| r.rhs).collect(),
            slack_lb,
            slack_ub,
            cost: inst.objective.clone(),
            nnz,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// Solves the relaxation with the given structural bounds.
    pub fn solve(&self, lower: &[f64], upper: &[f64], clock: &mut Clock) -> Result<LpResult, LpError> {
        assert_eq!(lower.len(), self.n);
        assert_eq!(upper.len(), self.n);
        if lower.iter().zip(upper).any(|(l, u)| l > u) {
            return Ok(LpResult { status: LpStatus::Infeasible, x: Vec::new(), objective: f64::INFINITY, iterations: 0 });
        }
        let mut last_err = None;
        for attempt in 0..MAX_REFACTOR_RETRIES {
            let mut s = Simplex::new(self, lower, upper, attempt);
            match s.run(clock) {
                Ok(r) => return Ok(r),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }
}

/// Solves the LP relaxation of `inst` with a fresh work clock.
pub fn solve_lp_relaxation(inst: &MipInstance) -> Result<LpResult, LpError> {
    let model = LpModel::from_instance(inst);
    let mut clock = Clock::new(ClockMode::Work);
    model.solve(&inst.lower, &inst.upper, &mut clock)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    Lower,
    Upper,
    Free,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

struct Simplex<'a> {
    model: &'a LpModel,
    m: usize,
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    /// Row and sign of each artificial column, indexed from `n + m`.
    arts: Vec<(usize, f64)>,
    x: Vec<f64>,
    status: Vec<Status>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
    degenerate_run: usize,
    bland: bool,
    /// Retry index; later attempts refactor more often.
    attempt: usize,
    // scratch
    y: Vec<f64>,
    alpha: Vec<f64>,
}

impl<'a> Simplex<'a> {
    fn new(model: &'a LpModel, lower: &[f64], upper: &[f64], attempt: usize) -> Self {
        let (n, m) = (model.n, model.m);
        let mut lb: Vec<f64> = lower.to_vec();
        let mut ub: Vec<f64> = upper.to_vec();
        lb.extend_from_slice(&model.slack_lb);
        ub.extend_from_slice(&model.slack_ub);

        let mut x = vec![0.0; n + m];
        let mut status = vec![Status::Lower; n + m];
        for j in 0..n {
            let (l, u) = (lb[j], ub[j]);
            if l.is_finite() {
                x[j] = l;
                status[j] = Status::Lower;
            } else if u.is_finite() {
                x[j] = u;
                status[j] = Status::Upper;
            } else {
                x[j] = 0.0;
                status[j] = Status::Free;
            }
        }
        // Residual each slack would have to absorb.
        let mut resid = model.rhs.clone();
        for j in 0..n {
            if x[j] != 0.0 {
                for &(i, a) in &model.cols[j] {
                    resid[i] -= a * x[j];
                }
            }
        }
        let mut basis = Vec::with_capacity(m);
        let mut arts = Vec::new();
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            let s = n + i;
            let r = resid[i];
            if r >= lb[s] && r <= ub[s] {
                x[s] = r;
                status[s] = Status::Basic;
                basis.push(s);
                binv[i * m + i] = 1.0;
            } else {
                let bound = if r < lb[s] { lb[s] } else { ub[s] };
                x[s] = bound;
                status[s] = if r < lb[s] { Status::Lower } else { Status::Upper };
                let rest = r - bound;
                let sign = if rest >= 0.0 { 1.0 } else { -1.0 };
                let col = n + m + arts.len();
                arts.push((i, sign));
                lb.push(0.0);
                ub.push(f64::INFINITY);
                x.push(rest.abs());
                status.push(Status::Basic);
                basis.push(col);
                binv[i * m + i] = sign;
            }
        }
        let total = x.len();
        Simplex {
            model,
            m,
            lb,
            ub,
            cost: vec![0.0; total],
            arts,
            x,
            status,
            basis,
            binv,
            iterations: 0,
            since_refactor: 0,
            degenerate_run: 0,
            bland: false,
            attempt,
            y: vec![0.0; m],
            alpha: vec![0.0; m],
        }
    }

    fn ncols(&self) -> usize {
        self.x.len()
    }

    fn for_col(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        let (n, m) = (self.model.n, self.m);
        if j < n {
            for &(i, a) in &self.model.cols[j] {
                f(i, a);
            }
        } else if j < n + m {
            f(j - n, 1.0);
        } else {
            let (i, s) = self.arts[j - n - m];
            f(i, s);
        }
    }

    fn run(&mut self, clock: &mut Clock) -> Result<LpResult, LpError> {
        let (n, m) = (self.model.n, self.m);
        let iter_cap = 50 * (n + m + self.arts.len()) + 1000;

        if !self.arts.is_empty() {
            for k in 0..self.arts.len() {
                self.cost[n + m + k] = 1.0;
            }
            self.optimize(clock, iter_cap)?;
            let infeas: f64 = (n + m..self.ncols()).map(|j| self.x[j].max(0.0)).sum();
            let scale = 1.0 + self.model.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if infeas > PRIMAL_TOL * scale {
                return Ok(LpResult {
                    status: LpStatus::Infeasible,
                    x: Vec::new(),
                    objective: f64::INFINITY,
                    iterations: self.iterations,
                });
            }
            for j in n + m..self.ncols() {
                self.cost[j] = 0.0;
                self.ub[j] = 0.0;
                if self.status[j] != Status::Basic {
                    self.x[j] = 0.0;
                    self.status[j] = Status::Lower;
                }
            }
            self.refactor(clock)?;
        }
        self.cost[..n].copy_from_slice(&self.model.cost);
        let unbounded = !self.optimize(clock, iter_cap)?;

        self.refactor(clock)?;
        self.verify_primal()?;
        let x: Vec<f64> = self.x[..n].to_vec();
        let objective = self.model.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpResult {
            status: if unbounded { LpStatus::Unbounded } else { LpStatus::Optimal },
            x,
            objective,
            iterations: self.iterations,
        })
    }

    /// Runs pivots until optimal (`true`) or an unbounded ray is found (`false`).
    fn optimize(&mut self, clock: &mut Clock, iter_cap: usize) -> Result<bool, LpError> {
        let refactor_every = REFACTOR_EVERY >> self.attempt.min(3);
        let start = self.iterations;
        loop {
            if self.iterations - start > iter_cap {
                return Err(LpError::Numerical(format!("iteration cap {iter_cap} reached")));
            }
            if self.since_refactor >= refactor_every.max(8) {
                self.refactor(clock)?;
            }
            match self.iterate(clock)? {
                Step::Optimal => return Ok(true),
                Step::Unbounded => return Ok(false),
                Step::Moved => {}
            }
        }
    }

    fn iterate(&mut self, clock: &mut Clock) -> Result<Step, LpError> {
        let m = self.m;
        let ncols = self.ncols();
        // duals y^T = c_B^T B^-1
        self.y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &bj) in self.basis.iter().enumerate() {
            let cb = self.cost[bj];
            if cb != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, &b) in self.y.iter_mut().zip(row) {
                    *yk += cb * b;
                }
            }
        }

        let mut best: Option<(usize, f64, f64)> = None; // (col, |d|, dir)
        for j in 0..ncols {
            let st = self.status[j];
            if st == Status::Basic || self.ub[j] - self.lb[j] <= 0.0 && st != Status::Free {
                continue;
            }
            let mut d = self.cost[j];
            self.for_col(j, |i, a| d -= self.y[i] * a);
            let dir = match st {
                Status::Lower if d < -OPT_TOL => 1.0,
                Status::Upper if d > OPT_TOL => -1.0,
                Status::Free if d.abs() > OPT_TOL => -d.signum(),
                _ => continue,
            };
            if self.bland {
                best = Some((j, d.abs(), dir));
                break;
            }
            if best.is_none_or(|(_, bd, _)| d.abs() > bd) {
                best = Some((j, d.abs(), dir));
            }
        }
        clock.charge((m * m + self.model.nnz + ncols) as f64);
        let Some((q, _, dir)) = best else {
            return Ok(Step::Optimal);
        };

        // alpha = B^-1 A_q
        self.alpha.iter_mut().for_each(|v| *v = 0.0);
        let mut col = Vec::new();
        self.for_col(q, |i, a| col.push((i, a)));
        for (i, al) in self.alpha.iter_mut().enumerate() {
            let row = &self.binv[i * m..(i + 1) * m];
            *al = col.iter().map(|&(r, a)| row[r] * a).sum();
        }

        // ratio test
        let mut theta = self.ub[q] - self.lb[q];
        let mut leave: Option<(usize, bool)> = None; // (basis position, hits upper)
        let mut leave_key = (0.0f64, usize::MAX);
        for i in 0..m {
            let a = self.alpha[i] * dir;
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            let bj = self.basis[i];
            let xb = self.x[bj];
            let (limit, upper) = if a > 0.0 {
                if self.lb[bj] == f64::NEG_INFINITY {
                    continue;
                }
                (((xb - self.lb[bj]) / a).max(0.0), false)
            } else {
                if self.ub[bj] == f64::INFINITY {
                    continue;
                }
                (((self.ub[bj] - xb) / -a).max(0.0), true)
            };
            let tie = (limit - theta).abs() <= 1e-12 * (1.0 + theta.abs());
            let better = if leave.is_none() {
                limit < theta || tie
            } else if tie {
                if self.bland {
                    bj < leave_key.1
                } else {
                    a.abs() > leave_key.0
                }
            } else {
                limit < theta
            };
            if better {
                theta = theta.min(limit);
                leave = Some((i, upper));
                leave_key = (a.abs(), bj);
            }
        }
        if theta == f64::INFINITY {
            return Ok(Step::Unbounded);
        }

        self.iterations += 1;
        self.since_refactor += 1;
        if theta <= 1e-12 {
            self.degenerate_run += 1;
            if self.degenerate_run > DEGENERATE_RUN {
                self.bland = true;
            }
        } else {
            self.degenerate_run = 0;
            self.bland = false;
        }

        for i in 0..m {
            let bj = self.basis[i];
            self.x[bj] -= dir * theta * self.alpha[i];
        }
        self.x[q] += dir * theta;
        clock.charge((2 * m * m + m * col.len()) as f64);

        match leave {
            None => {
                // bound flip
                if dir > 0.0 {
                    self.x[q] = self.ub[q];
                    self.status[q] = Status::Upper;
                } else {
                    self.x[q] = self.lb[q];
                    self.status[q] = Status::Lower;
                }
            }
            Some((r, upper)) => {
                let lj = self.basis[r];
                if upper {
                    self.x[lj] = self.ub[lj];
                    self.status[lj] = Status::Upper;
                } else {
                    self.x[lj] = self.lb[lj];
                    self.status[lj] = Status::Lower;
                }
                self.status[q] = Status::Basic;
                self.basis[r] = q;
                let piv = self.alpha[r];
                for k in 0..m {
                    self.binv[r * m + k] /= piv;
                }
                let (before, rest) = self.binv.split_at_mut(r * m);
                let (pivot_row, after) = rest.split_at_mut(m);
                for (i, chunk) in before.chunks_mut(m).enumerate() {
                    let f = self.alpha[i];
                    if f != 0.0 {
                        chunk.iter_mut().zip(pivot_row.iter()).for_each(|(v, p)| *v -= f * p);
                    }
                }
                for (off, chunk) in after.chunks_mut(m).enumerate() {
                    let f = self.alpha[r + 1 + off];
                    if f != 0.0 {
                        chunk.iter_mut().zip(pivot_row.iter()).for_each(|(v, p)| *v -= f * p);
                    }
                }
            }
        }
        Ok(Step::Moved)
    }

    /// Rebuilds B^-1 by Gauss-Jordan elimination and recomputes basic values.
    fn refactor(&mut self, clock: &mut Clock) -> Result<(), LpError> {
        let m = self.m;
        self.since_refactor = 0;
        let mut a = vec![0.0; m * m];
        for (k, &bj) in self.basis.iter().enumerate() {
            let mut entries = Vec::new();
            self.for_col(bj, |i, v| entries.push((i, v)));
            for (i, v) in entries {
                a[i * m + k] = v;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let (p, pv) = (c..m)
                .map(|r| (r, a[r * m + c].abs()))
                .fold((c, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pv < 1e-11 {
                return Err(LpError::Numerical("singular basis during refactorization".into()));
            }
            if p != c {
                for k in 0..m {
                    a.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            let d = a[c * m + c];
            for k in 0..m {
                a[c * m + k] /= d;
                inv[c * m + k] /= d;
            }
            for r in 0..m {
                if r != c {
                    let f = a[r * m + c];
                    if f != 0.0 {
                        for k in 0..m {
                            a[r * m + k] -= f * a[c * m + k];
                            inv[r * m + k] -= f * inv[c * m + k];
                        }
                    }
                }
            }
        }
        // rows of B^-1 are indexed by basis position
        self.binv = inv;
        clock.charge((2 * m * m * m + m * self.model.nnz) as f64);

        let mut r = self.model.rhs.clone();
        for j in 0..self.ncols() {
            if self.status[j] != Status::Basic && self.x[j] != 0.0 {
                let xj = self.x[j];
                let mut entries = Vec::new();
                self.for_col(j, |i, v| entries.push((i, v)));
                for (i, v) in entries {
                    r[i] -= v * xj;
                }
            }
        }
        for k in 0..m {
            let row = &self.binv[k * m..(k + 1) * m];
            let v: f64 = row.iter().zip(&r).map(|(a, b)| a * b).sum();
            self.x[self.basis[k]] = v;
        }
        Ok(())
    }

    fn verify_primal(&self) -> Result<(), LpError> {
        for j in 0..self.ncols() {
            let tol = PRIMAL_TOL * (1.0 + self.x[j].abs());
            if self.x[j] < self.lb[j] - tol || self.x[j] > self.ub[j] + tol {
                return Err(LpError::Numerical(format!(
                    "column {j} at {} outside [{}, {}]",
                    self.x[j], self.lb[j], self.ub[j]
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mip::VarKind;

    fn lp(obj: &[f64], lb: &[f64], ub: &[f64], rows: Vec<(Vec<(usize, f64)>, Sense, f64)>) -> MipInstance {
        let mut m = MipInstance::new("lp", "test", 0);
        for j in 0..obj.len() {
            m.add_var(format!("x{j}"), VarKind::Continuous, lb[j], ub[j], obj[j]);
        }
        for (t, s, b) in rows {
            m.add_row(t, s, b);
        }
        m
    }

    /// Enumerates vertices of a 2-D polytope {lb <= x <= ub, a x <= b} by
    /// intersecting every pair of boundary lines.
    fn vertex_oracle(c: [f64; 2], lines: &[([f64; 2], f64)]) -> f64 {
        let mut best = f64::INFINITY;
        for (i, (a1, b1)) in lines.iter().enumerate() {
            for (a2, b2) in &lines[i + 1..] {
                let det = a1[0] * a2[1] - a1[1] * a2[0];
                if det.abs() < 1e-12 {
                    continue;
                }
                let x = (b1 * a2[1] - a1[1] * b2) / det;
                let y = (a1[0] * b2 - b1 * a2[0]) / det;
                if lines.iter().all(|(a, b)| a[0] * x + a[1] * y <= b + 1e-9) {
                    best = best.min(c[0] * x + c[1] * y);
                }
            }
        }
        best
    }

    #[test]
    fn two_d_polytope_matches_vertex_enumeration() {
        let lines = [
            ([1.0, 1.0], 3.0),
            ([1.0, 0.0], 2.0),
            ([0.0, 1.0], 2.0),
            ([-1.0, 0.0], 0.0),
            ([0.0, -1.0], 0.0),
        ];
        let oracle = vertex_oracle([-1.0, -2.0], &lines);
        assert_eq!(oracle, -5.0);
        let m = lp(&[-1.0, -2.0], &[0.0, 0.0], &[2.0, 2.0], vec![(vec![(0, 1.0), (1, 1.0)], Sense::LE, 3.0)]);
        let r = solve_lp_relaxation(&m).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective - oracle).abs() < 1e-9);
        assert!((r.x[0] - 1.0).abs() < 1e-9 && (r.x[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn no_rows_goes_to_bound() {
        let m = lp(&[1.0], &[0.0], &[1.0], vec![]);
        let r = solve_lp_relaxation(&m).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert_eq!(r.x, vec![0.0]);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let m = lp(
            &[1.0],
            &[f64::NEG_INFINITY],
            &[f64::INFINITY],
            vec![(vec![(0, 1.0)], Sense::GE, 1.0), (vec![(0, 1.0)], Sense::LE, 0.0)],
        );
        assert_eq!(solve_lp_relaxation(&m).unwrap().status, LpStatus::Infeasible);
        let b = lp(&[1.0], &[1.0], &[0.0], vec![]);
        assert_eq!(solve_lp_relaxation(&b).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray_detected() {
        let m = lp(&[-1.0, 0.0], &[0.0, 0.0], &[f64::INFINITY, 1.0], vec![(vec![(0, 1.0), (1, -1.0)], Sense::GE, 0.0)]);
        assert_eq!(solve_lp_relaxation(&m).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_and_free_variables() {
        // min x + y, x - y = 1, x free, y in [-2, 5]  -> y = -2, x = -1
        let m = lp(
            &[1.0, 1.0],
            &[f64::NEG_INFINITY, -2.0],
            &[f64::INFINITY, 5.0],
            vec![(vec![(0, 1.0), (1, -1.0)], Sense::EQ, 1.0)],
        );
        let r = solve_lp_relaxation(&m).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!((r.objective + 3.0).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Klee-Minty-like degenerate box with many redundant rows at the origin.
        let mut rows = Vec::new();
        for k in 1..8 {
            rows.push((vec![(0, k as f64), (1, 1.0), (2, -(k as f64))], Sense::LE, 0.0));
        }
        rows.push((vec![(0, 1.0), (1, 1.0), (2, 1.0)], Sense::LE, 4.0));
        let m = lp(&[-1.0, -1.0, -1.0], &[0.0; 3], &[f64::INFINITY; 3], rows);
        let r = solve_lp_relaxation(&m).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert!(m.check_feasibility(&r.x, 1e-7).unwrap().feasible);
        assert!((r.objective + 4.0).abs() < 1e-9);
    }
}
