//! Bounded-variable simplex with an explicit dense basis inverse.
//!
//! Every row gets one logical column: `+e_r` on `[0, inf)` for `<=`,
//! `-e_r` on `[0, inf)` for `>=`, and a fixed `[0, 0]` artificial for `=`.
//!
//! `solve` first tries a dual simplex with steepest-edge row choice and a
//! bound-flipping ratio test. Its starting basis is made dual feasible by
//! moving nonbasic variables to their other bound; a variable without one
//! gets a temporary bound far from the finite one. This covers cold starts with
//! nonnegative costs, re-solves after bound changes, and re-solves after
//! new columns are appended. When the dual cannot finish (a temporary bound
//! is still active, or the basis cannot be made dual feasible) a primal
//! two-phase method takes over on slightly widened bounds, with Dantzig
//! pricing and Bland's rule after a run of degenerate pivots.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OmtError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

impl RowSense {
    fn symbol(self) -> &'static str {
        match self {
            RowSense::Le => "<=",
            RowSense::Ge => ">=",
            RowSense::Eq => "=",
        }
    }
}

/// `min c'x  s.t.  rows (sense) rhs,  lo <= x <= hi`, stored by column.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearProgram {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    columns: Vec<Vec<(usize, f64)>>,
    senses: Vec<RowSense>,
    rhs: Vec<f64>,
}

impl LinearProgram {
    pub fn new() -> LinearProgram {
        LinearProgram::default()
    }

    /// Dense constructor, mainly for tests. `rows[r][j]` is the
    /// coefficient of variable `j` in row `r`.
    pub fn from_dense(
        objective: &[f64],
        rows: &[Vec<f64>],
        senses: &[RowSense],
        rhs: &[f64],
        bounds: &[(f64, f64)],
    ) -> LinearProgram {
        let mut lp = LinearProgram::new();
        for (&s, &b) in senses.iter().zip(rhs) {
            lp.add_row(s, b);
        }
        for (j, (&c, &(lo, hi))) in objective.iter().zip(bounds).enumerate() {
            let entries = rows
                .iter()
                .enumerate()
                .filter(|(_, row)| row[j] != 0.0)
                .map(|(r, row)| (r, row[j]))
                .collect();
            lp.add_variable(c, lo, hi, entries);
        }
        lp
    }

    pub fn add_row(&mut self, sense: RowSense, rhs: f64) -> usize {
        self.senses.push(sense);
        self.rhs.push(rhs);
        self.senses.len() - 1
    }

    pub fn add_variable(&mut self, cost: f64, lo: f64, hi: f64, entries: Vec<(usize, f64)>) -> usize {
        self.objective.push(cost);
        self.lower.push(lo);
        self.upper.push(hi);
        self.columns.push(entries);
        self.columns.len() - 1
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.lower[var] = lo;
        self.upper[var] = hi;
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.senses.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    pub fn column(&self, var: usize) -> &[(usize, f64)] {
        &self.columns[var]
    }

    pub fn sense(&self, row: usize) -> RowSense {
        self.senses[row]
    }

    pub fn rhs(&self, row: usize) -> f64 {
        self.rhs[row]
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.rhs.iter().position(|b| !b.is_finite()) {
            return Err(OmtError::Model(format!("row {r} has a non-finite right-hand side")));
        }
        for j in 0..self.n_vars() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if !(lo.is_finite() && lo <= hi) || hi.is_nan() {
                return Err(OmtError::Model(format!("variable {j} has invalid bounds [{lo}, {hi}]")));
            }
            if !self.objective[j].is_finite() {
                return Err(OmtError::Model(format!("variable {j} has a non-finite cost")));
            }
            if let Some(&(r, a)) = self.columns[j]
                .iter()
                .find(|(r, a)| *r >= self.n_rows() || !a.is_finite())
            {
                return Err(OmtError::Model(format!("variable {j} has a bad entry ({r}, {a})")));
            }
        }
        Ok(())
    }

    /// `A x` for every row.
    pub fn row_activity(&self, x: &[f64]) -> Vec<f64> {
        let mut act = vec![0.0; self.n_rows()];
        for (col, &v) in self.columns.iter().zip(x) {
            for &(r, a) in col {
                act[r] += a * v;
            }
        }
        act
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or bound by `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (r, act) in self.row_activity(x).into_iter().enumerate() {
            let b = self.rhs[r];
            let v = match self.senses[r] {
                RowSense::Le => act - b,
                RowSense::Ge => b - act,
                RowSense::Eq => (act - b).abs(),
            };
            worst = worst.max(v);
        }
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        worst
    }

    /// Plain-text listing: objective, one line per row, then bounds.
    pub fn dump(&self) -> String {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n_rows()];
        for (j, col) in self.columns.iter().enumerate() {
            for &(r, a) in col {
                rows[r].push((j, a));
            }
        }
        let terms = |entries: &[(usize, f64)]| {
            if entries.is_empty() {
                return "0".to_string();
            }
            entries
                .iter()
                .map(|&(j, a)| format!("{a:+} x{j}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = String::from("minimize\n");
        let obj: Vec<(usize, f64)> = self
            .objective
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, &c)| (j, c))
            .collect();
        let _ = writeln!(out, "  obj: {}", terms(&obj));
        out.push_str("subject to\n");
        for (r, entries) in rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "  r{r}: {} {} {}",
                terms(entries),
                self.senses[r].symbol(),
                self.rhs[r]
            );
        }
        out.push_str("bounds\n");
        for j in 0..self.n_vars() {
            let _ = writeln!(out, "  {} <= x{j} <= {}", self.lower[j], self.upper[j]);
        }
        out.push_str("end\n");
        out
    }
}

/// Relative size of the bound widening used against degeneracy.
const PERTURBATION: f64 = 1e-6;
/// Distance of a temporary bound from the finite one when a free direction
/// must be boxed to reach dual feasibility.
const ARTIFICIAL_RANGE: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexOptions {
    pub tol_feas: f64,
    pub tol_opt: f64,
    pub tol_pivot: f64,
    pub iteration_limit: usize,
    pub refactor_interval: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            tol_feas: 1e-7,
            tol_opt: 1e-6,
            tol_pivot: 1e-9,
            iteration_limit: 200_000,
            refactor_interval: 200,
            bland_after: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    /// One multiplier per row; `c_j - sum_r duals[r] a_rj` is the reduced cost.
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LpSolution {
    /// `b'y` plus the bound terms of nonbasic variables. Equals the primal
    /// objective at an optimal basis.
    pub fn dual_objective(&self, lp: &LinearProgram) -> f64 {
        let by: f64 = (0..lp.n_rows()).map(|r| lp.rhs(r) * self.duals[r]).sum();
        let bound_terms: f64 = self.reduced_costs.iter().zip(&self.primal).map(|(d, x)| d * x).sum();
        by + bound_terms
    }
}

/// Cold-start solve.
pub fn solve_lp(lp: &LinearProgram, options: &SimplexOptions) -> Result<LpSolution> {
    let mut solver = SimplexSolver::new(lp.clone(), *options)?;
    Ok(solver.solve())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VarStatus {
    Basic,
    Lower,
    Upper,
    /// Nonbasic strictly between its bounds, at the value stored in `x`.
    Super,
}

/// Basis snapshot for warm starts: the basic variables and the nonbasic
/// variables sitting at their upper bound. Variables added after the
/// snapshot are treated as nonbasic at their lower bound.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Basis {
    basic: Vec<u32>,
    at_upper: Vec<u32>,
}

pub struct SimplexSolver {
    lp: LinearProgram,
    options: SimplexOptions,
    m: usize,
    /// Internal variable indices: logicals `0..m`, structurals `m..`.
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    logical_sign: Vec<f64>,
    status: Vec<VarStatus>,
    x: Vec<f64>,
    head: Vec<usize>,
    /// Column-major basis inverse: entry (i, k) at `k * m + i`.
    binv: Vec<f64>,
    pivots_since_refactor: usize,
    needs_refactor: bool,
    /// Row-wise copy of the structural columns: `(structural index, value)`.
    rows: Vec<Vec<(u32, f64)>>,
}

impl SimplexSolver {
    pub fn new(lp: LinearProgram, options: SimplexOptions) -> Result<SimplexSolver> {
        lp.validate()?;
        let m = lp.n_rows();
        let mut lower = Vec::with_capacity(m + lp.n_vars());
        let mut upper = Vec::with_capacity(m + lp.n_vars());
        let mut logical_sign = Vec::with_capacity(m);
        for r in 0..m {
            let (sign, hi) = match lp.sense(r) {
                RowSense::Le => (1.0, f64::INFINITY),
                RowSense::Ge => (-1.0, f64::INFINITY),
                RowSense::Eq => (1.0, 0.0),
            };
            logical_sign.push(sign);
            lower.push(0.0);
            upper.push(hi);
        }
        lower.extend_from_slice(&lp.lower);
        upper.extend_from_slice(&lp.upper);
        let mut cost = vec![0.0; m];
        cost.extend_from_slice(&lp.objective);
        let n_total = m + lp.n_vars();
        let mut solver = SimplexSolver {
            lp,
            options,
            m,
            lower,
            upper,
            cost,
            logical_sign,
            status: vec![VarStatus::Lower; n_total],
            x: vec![0.0; n_total],
            head: (0..m).collect(),
            binv: Vec::new(),
            pivots_since_refactor: 0,
            needs_refactor: true,
            rows: vec![Vec::new(); m],
        };
        for j in 0..solver.lp.n_vars() {
            for &(r, a) in &solver.lp.columns[j] {
                solver.rows[r].push((j as u32, a));
            }
        }
        for r in 0..m {
            solver.status[r] = VarStatus::Basic;
        }
        solver.crash();
        Ok(solver)
    }

    /// Replaces fixed artificials by singleton structural columns of the
    /// same row where one exists, so slack-like columns start basic.
    fn crash(&mut self) {
        let m = self.m;
        let mut taken = vec![false; m];
        for j in 0..self.lp.n_vars() {
            let col = &self.lp.columns[j];
            if col.len() != 1 {
                continue;
            }
            let (r, a) = col[0];
            if taken[r] || self.lp.senses[r] != RowSense::Eq || a.abs() < 1e-3 {
                continue;
            }
            let v = self.lp.rhs[r] / a;
            let var = m + j;
            if v < self.lower[var] || v > self.upper[var] {
                continue;
            }
            taken[r] = true;
            self.status[r] = VarStatus::Lower;
            self.status[var] = VarStatus::Basic;
        }
        for j in 0..self.lp.n_vars() {
            if self.status[m + j] != VarStatus::Basic {
                self.status[m + j] = VarStatus::Lower;
            }
        }
        self.needs_refactor = true;
    }

    pub fn lp(&self) -> &LinearProgram {
        &self.lp
    }

    pub fn options(&self) -> &SimplexOptions {
        &self.options
    }

    /// Appends a structural column, nonbasic at its lower bound.
    pub fn add_column(&mut self, cost: f64, lo: f64, hi: f64, entries: Vec<(usize, f64)>) -> usize {
        let j = self.lp.add_variable(cost, lo, hi, entries);
        for &(r, a) in &self.lp.columns[j] {
            self.rows[r].push((j as u32, a));
        }
        self.lower.push(lo);
        self.upper.push(hi);
        self.cost.push(cost);
        self.status.push(VarStatus::Lower);
        self.x.push(lo);
        j
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) {
        self.lp.set_bounds(var, lo, hi);
        let v = self.m + var;
        self.lower[v] = lo;
        self.upper[v] = hi;
        match self.status[v] {
            VarStatus::Upper if hi.is_finite() => self.x[v] = hi,
            VarStatus::Upper | VarStatus::Lower | VarStatus::Super => {
                self.status[v] = VarStatus::Lower;
                self.x[v] = lo;
            }
            VarStatus::Basic => {}
        }
    }

    pub fn basis(&self) -> Basis {
        let pick = |want: VarStatus| {
            (0..self.status.len())
                .filter(|&v| self.status[v] == want)
                .map(|v| v as u32)
                .collect()
        };
        Basis {
            basic: pick(VarStatus::Basic),
            at_upper: pick(VarStatus::Upper),
        }
    }

    pub fn set_basis(&mut self, basis: &Basis) {
        let n = self.status.len();
        let mut status = vec![VarStatus::Lower; n];
        for &v in &basis.at_upper {
            let v = v as usize;
            if v < n && self.upper[v].is_finite() {
                status[v] = VarStatus::Upper;
            }
        }
        let mut basics = 0;
        for &v in &basis.basic {
            if (v as usize) < n {
                status[v as usize] = VarStatus::Basic;
                basics += 1;
            }
        }
        self.status = status;
        if basics != self.m {
            // Not a basis of this problem: fall back to the crash basis.
            for v in 0..n {
                self.status[v] = if v < self.m { VarStatus::Basic } else { VarStatus::Lower };
            }
            self.crash();
            return;
        }
        self.needs_refactor = true;
    }

    fn column_entries(&self, v: usize) -> ColumnRef<'_> {
        if v < self.m {
            ColumnRef::Unit(v, self.logical_sign[v])
        } else {
            ColumnRef::Sparse(&self.lp.columns[v - self.m])
        }
    }

    /// `B^-1 a_v`.
    fn ftran(&self, v: usize) -> Vec<f64> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        let mut add = |k: usize, a: f64| {
            let col = &self.binv[k * m..(k + 1) * m];
            for (out, &b) in alpha.iter_mut().zip(col) {
                *out += a * b;
            }
        };
        match self.column_entries(v) {
            ColumnRef::Unit(r, s) => add(r, s),
            ColumnRef::Sparse(entries) => {
                for &(r, a) in entries {
                    add(r, a);
                }
            }
        }
        alpha
    }

    /// Replaces the basic variable at position `r` using the FTRAN'd
    /// entering column `alpha`.
    fn pivot_inverse(&mut self, r: usize, alpha: &[f64]) {
        let m = self.m;
        let pivot = alpha[r];
        let nz: Vec<usize> = (0..m).filter(|&i| i != r && alpha[i] != 0.0).collect();
        for k in 0..m {
            let col = &mut self.binv[k * m..(k + 1) * m];
            let br = col[r];
            if br == 0.0 {
                continue;
            }
            let p = br / pivot;
            for &i in &nz {
                col[i] -= alpha[i] * p;
            }
            col[r] = p;
        }
    }

    /// Rebuilds the basis inverse from the basic set, repairing a singular
    /// basis with logical columns.
    fn refactor(&mut self) {
        let m = self.m;
        self.binv = vec![0.0; m * m];
        for i in 0..m {
            self.binv[i * m + i] = 1.0;
        }
        let mut head = vec![usize::MAX; m];
        let basics: Vec<usize> = (0..self.status.len())
            .filter(|&v| self.status[v] == VarStatus::Basic)
            .collect();
        for &v in basics.iter().filter(|&&v| v < m) {
            head[v] = v;
            if self.logical_sign[v] < 0.0 {
                self.binv[v * m + v] = -1.0;
            }
        }
        let mut structurals: Vec<usize> = basics.iter().copied().filter(|&v| v >= m).collect();
        structurals.sort_by_key(|&v| (self.lp.columns[v - m].len(), v));
        for v in structurals {
            let alpha = self.ftran(v);
            let mut best = None;
            let mut best_abs = self.options.tol_pivot.max(1e-9);
            for i in 0..m {
                if head[i] == usize::MAX && alpha[i].abs() > best_abs {
                    best_abs = alpha[i].abs();
                    best = Some(i);
                }
            }
            match best {
                Some(r) => {
                    self.pivot_inverse(r, &alpha);
                    head[r] = v;
                }
                None => {
                    // Dependent column: drop it from the basis.
                    self.status[v] = if self.upper[v].is_finite()
                        && (self.x[v] - self.upper[v]).abs() < (self.x[v] - self.lower[v]).abs()
                    {
                        VarStatus::Upper
                    } else {
                        VarStatus::Lower
                    };
                }
            }
        }
        for r in 0..m {
            if head[r] == usize::MAX {
                // Column r of the inverse is still e_r, so the logical
                // pivots on its own row.
                let alpha = self.ftran(r);
                self.pivot_inverse(r, &alpha);
                head[r] = r;
                self.status[r] = VarStatus::Basic;
            }
        }
        self.head = head;
        self.pivots_since_refactor = 0;
        self.needs_refactor = false;
        self.compute_primal();
    }

    /// Sets nonbasic values to their bounds and solves for the basics.
    fn compute_primal(&mut self) {
        let m = self.m;
        let mut rhs = self.lp.rhs.clone();
        for v in 0..self.status.len() {
            let val = match self.status[v] {
                VarStatus::Basic => continue,
                VarStatus::Lower => self.lower[v],
                VarStatus::Upper => self.upper[v],
                VarStatus::Super => self.x[v],
            };
            self.x[v] = val;
            if val == 0.0 {
                continue;
            }
            match self.column_entries(v) {
                ColumnRef::Unit(r, s) => rhs[r] -= s * val,
                ColumnRef::Sparse(entries) => {
                    for &(r, a) in entries {
                        rhs[r] -= a * val;
                    }
                }
            }
        }
        let mut xb = vec![0.0; m];
        for (k, &b) in rhs.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            let col = &self.binv[k * m..(k + 1) * m];
            for (out, &e) in xb.iter_mut().zip(col) {
                *out += b * e;
            }
        }
        for (i, &v) in self.head.iter().enumerate() {
            self.x[v] = xb[i];
        }
    }

    /// `c_B' B^-1`.
    fn btran(&self, cb: &[f64]) -> Vec<f64> {
        let m = self.m;
        (0..m)
            .map(|k| {
                let col = &self.binv[k * m..(k + 1) * m];
                col.iter().zip(cb).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    fn reduced_cost(&self, v: usize, cost: f64, y: &[f64]) -> f64 {
        match self.column_entries(v) {
            ColumnRef::Unit(r, s) => cost - s * y[r],
            ColumnRef::Sparse(entries) => cost - entries.iter().map(|&(r, a)| a * y[r]).sum::<f64>(),
        }
    }

    fn infeasibility(&self, v: usize) -> f64 {
        let x = self.x[v];
        (self.lower[v] - x).max(x - self.upper[v]).max(0.0)
    }

    pub fn solve(&mut self) -> LpSolution {
        let mut iterations = 0usize;
        let limit = self.options.iteration_limit;
        self.refactor();
        let mut artificial = Vec::new();
        if self.make_dual_feasible(&mut artificial) {
            // Running out of breakpoints only proves infeasibility when
            // every bound is genuine.
            let proves_infeasible = artificial.is_empty();
            let end = self.run_dual(&mut iterations, limit);
            let superbasic = self.drop_artificial_bounds(&mut artificial);
            match end {
                DualEnd::Optimal if !superbasic => {
                    self.refactor();
                    if self.is_primal_feasible() && self.is_dual_feasible() {
                        return self.solution(LpStatus::Optimal, iterations);
                    }
                }
                DualEnd::Infeasible if proves_infeasible => {
                    // Confirm on a fresh factorization before giving up.
                    self.refactor();
                    if self.make_dual_feasible(&mut artificial) && artificial.is_empty() {
                        let end = self.run_dual(&mut iterations, limit);
                        if end == DualEnd::Infeasible {
                            return self.solution(LpStatus::Infeasible, iterations);
                        }
                    }
                }
                DualEnd::Limit => return self.solution(LpStatus::IterationLimit, iterations),
                _ => {}
            }
        }

        let original = self.perturb_bounds();
        let mut status = self.primal_phases(&mut iterations, limit);
        self.restore_bounds(original);
        if status == LpStatus::Optimal && !self.is_primal_feasible() {
            status = if self.make_dual_feasible(&mut artificial) {
                let end = self.run_dual(&mut iterations, limit);
                let superbasic = self.drop_artificial_bounds(&mut artificial);
                match end {
                    DualEnd::Optimal if !superbasic => LpStatus::Optimal,
                    DualEnd::Limit => LpStatus::IterationLimit,
                    _ => self.primal_phases(&mut iterations, limit),
                }
            } else {
                self.primal_phases(&mut iterations, limit)
            };
        }
        if status == LpStatus::Optimal {
            self.refactor();
            if !(self.is_primal_feasible() && self.is_dual_feasible()) {
                status = self.primal_phases(&mut iterations, limit);
            }
        }
        self.solution(status, iterations)
    }

    fn primal_phases(&mut self, iterations: &mut usize, limit: usize) -> LpStatus {
        let mut status = LpStatus::Optimal;
        for _attempt in 0..4 {
            self.refactor();
            match self.run_phase(Phase::One, iterations, limit) {
                PhaseEnd::Done => {}
                PhaseEnd::Stuck => {
                    status = LpStatus::Infeasible;
                    break;
                }
                PhaseEnd::Limit => return LpStatus::IterationLimit,
                PhaseEnd::Unbounded => unreachable!("phase one is bounded"),
            }
            match self.run_phase(Phase::Two, iterations, limit) {
                PhaseEnd::Done => {}
                PhaseEnd::Unbounded => return LpStatus::Unbounded,
                PhaseEnd::Limit => return LpStatus::IterationLimit,
                PhaseEnd::Stuck => unreachable!("phase two never reports stuck"),
            }
            // Confirm on a fresh factorization. Drift in the updated
            // values can leave a dual feasible basis slightly infeasible;
            // a few dual pivots repair that.
            self.refactor();
            if self.is_dual_feasible() {
                if self.is_primal_feasible() {
                    return LpStatus::Optimal;
                }
                if !self.status.contains(&VarStatus::Super) {
                    match self.run_dual(iterations, limit) {
                        DualEnd::Optimal => {
                            self.refactor();
                            if self.is_primal_feasible() && self.is_dual_feasible() {
                                return LpStatus::Optimal;
                            }
                        }
                        DualEnd::Limit => return LpStatus::IterationLimit,
                        DualEnd::Infeasible | DualEnd::Stalled => {}
                    }
                }
            }
            status = LpStatus::IterationLimit;
        }
        if status == LpStatus::Infeasible {
            // Phase one may have stopped on a numerically stale inverse.
            self.refactor();
            if self.is_primal_feasible() && self.run_phase(Phase::Two, iterations, limit) == PhaseEnd::Done {
                status = LpStatus::Optimal;
            }
        }
        status
    }

    fn is_primal_feasible(&self) -> bool {
        self.head
            .iter()
            .all(|&v| self.infeasibility(v) <= self.options.tol_feas)
    }

    /// Widens every bound by a small pseudo-random amount so that ties in
    /// the primal ratio test become rare. Returns the original bounds.
    fn perturb_bounds(&mut self) -> (Vec<f64>, Vec<f64>) {
        let original = (self.lower.clone(), self.upper.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let scale = PERTURBATION;
        for v in 0..self.status.len() {
            let (lo, hi) = (self.lower[v], self.upper[v]);
            if lo.is_finite() {
                self.lower[v] = lo - scale * (1.0 + lo.abs()) * rng.gen_range(1.0..2.0);
            }
            if hi.is_finite() {
                self.upper[v] = hi + scale * (1.0 + hi.abs()) * rng.gen_range(1.0..2.0);
            }
        }
        self.compute_primal();
        original
    }

    fn restore_bounds(&mut self, (lower, upper): (Vec<f64>, Vec<f64>)) {
        self.lower = lower;
        self.upper = upper;
        self.refactor();
    }

    /// Reduced costs of all variables for the current basis.
    fn reduced_costs(&self) -> Vec<f64> {
        let cb: Vec<f64> = self.head.iter().map(|&v| self.cost[v]).collect();
        let y = self.btran(&cb);
        (0..self.status.len())
            .map(|v| {
                if self.status[v] == VarStatus::Basic {
                    0.0
                } else {
                    self.reduced_cost(v, self.cost[v], &y)
                }
            })
            .collect()
    }

    /// Moves nonbasic variables with a wrong-signed reduced cost to their
    /// other bound. A missing bound is replaced by an artificial one
    /// `ARTIFICIAL_RANGE` away, whose original value is pushed onto `artificial`.
    fn make_dual_feasible(&mut self, artificial: &mut Vec<(usize, f64, f64)>) -> bool {
        let tol = self.options.tol_opt;
        if self.status.contains(&VarStatus::Super) {
            return false;
        }
        let d = self.reduced_costs();
        let mut changed = false;
        for v in 0..self.status.len() {
            let (lo, hi) = (self.lower[v], self.upper[v]);
            if lo == hi {
                continue;
            }
            match self.status[v] {
                VarStatus::Lower if d[v] < -tol => {
                    if !hi.is_finite() {
                        artificial.push((v, lo, hi));
                        self.upper[v] = lo + ARTIFICIAL_RANGE;
                    }
                    self.status[v] = VarStatus::Upper;
                    changed = true;
                }
                VarStatus::Upper if d[v] > tol => {
                    if !lo.is_finite() {
                        artificial.push((v, lo, hi));
                        self.lower[v] = hi - ARTIFICIAL_RANGE;
                    }
                    self.status[v] = VarStatus::Lower;
                    changed = true;
                }
                _ => {}
            }
        }
        if changed {
            self.compute_primal();
        }
        true
    }

    /// Restores bounds replaced by `make_dual_feasible`. A variable still
    /// resting on an artificial bound keeps its value as a superbasic.
    fn drop_artificial_bounds(&mut self, artificial: &mut Vec<(usize, f64, f64)>) -> bool {
        let mut superbasic = false;
        for (v, lo, hi) in artificial.drain(..) {
            let at_artificial = match self.status[v] {
                VarStatus::Upper => !hi.is_finite(),
                VarStatus::Lower => !lo.is_finite(),
                _ => false,
            };
            if at_artificial {
                self.status[v] = VarStatus::Super;
                superbasic = true;
            }
            self.lower[v] = lo;
            self.upper[v] = hi;
        }
        superbasic
    }

    /// Bounded dual simplex from a dual feasible basis, with exact dual
    /// steepest-edge row selection.
    fn run_dual(&mut self, iterations: &mut usize, limit: usize) -> DualEnd {
        let m = self.m;
        let tol_feas = self.options.tol_feas;
        let tol_opt = self.options.tol_opt;
        let mut retries = 0usize;
        let mut d = Vec::new();
        let mut weights = vec![0.0; m];
        let mut fresh = false;
        let n = self.status.len();
        let mut row = vec![0.0; n];
        loop {
            if self.needs_refactor || self.pivots_since_refactor >= self.options.refactor_interval || !fresh {
                if self.needs_refactor || self.pivots_since_refactor >= self.options.refactor_interval {
                    self.refactor();
                }
                d = self.reduced_costs();
                fresh = true;
            }
            // Leaving row: largest squared violation over the squared norm
            // of its row of the inverse.
            weights.fill(0.0);
            for col in self.binv.chunks_exact(m) {
                for (acc, &b) in weights.iter_mut().zip(col) {
                    *acc += b * b;
                }
            }
            let mut leave: Option<(usize, f64)> = None;
            for (i, &v) in self.head.iter().enumerate() {
                let inf = self.infeasibility(v);
                if inf <= tol_feas {
                    continue;
                }
                let score = inf * inf / weights[i].max(1e-12);
                if leave.is_none_or(|(_, best)| score > best) {
                    leave = Some((i, score));
                }
            }
            let Some((r, _)) = leave else {
                return DualEnd::Optimal;
            };
            if *iterations >= limit {
                return DualEnd::Limit;
            }
            let leaving = self.head[r];
            let to_lower = self.x[leaving] < self.lower[leaving];
            let bound = if to_lower {
                self.lower[leaving]
            } else {
                self.upper[leaving]
            };
            let rho: Vec<f64> = (0..m).map(|k| self.binv[k * m + r]).collect();

            // Pivot row entries of the nonbasic columns, and the candidates
            // (variable, dual slack, |alpha|).
            row.fill(0.0);
            for (i, &p) in rho.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                row[i] = self.logical_sign[i] * p;
                for &(j, a) in &self.rows[i] {
                    row[m + j as usize] += p * a;
                }
            }
            let mut candidates: Vec<(usize, f64, f64)> = Vec::new();
            for v in 0..n {
                let st = self.status[v];
                if st == VarStatus::Basic {
                    continue;
                }
                let a = row[v];
                if a.abs() <= 1e-9 || self.upper[v] - self.lower[v] <= 0.0 {
                    continue;
                }
                // x_leaving moves by -a per unit increase of x_v.
                let (eligible, slack) = match (st, to_lower) {
                    (VarStatus::Lower, true) => (a < 0.0, d[v]),
                    (VarStatus::Upper, true) => (a > 0.0, -d[v]),
                    (VarStatus::Lower, false) => (a > 0.0, d[v]),
                    (VarStatus::Upper, false) => (a < 0.0, -d[v]),
                    (VarStatus::Basic | VarStatus::Super, _) => (false, 0.0),
                };
                if eligible {
                    candidates.push((v, slack.max(0.0), a.abs()));
                }
            }
            // Bound-flipping ratio test: pass breakpoints of boxed
            // candidates while the leaving row stays infeasible.
            candidates.sort_by(|a, b| (a.1 / a.2).total_cmp(&(b.1 / b.2)));
            let mut slope = (self.x[leaving] - bound).abs();
            let mut passed = 0;
            while passed < candidates.len() {
                let (v, _, a) = candidates[passed];
                let range = self.upper[v] - self.lower[v];
                if !range.is_finite() || slope - a * range <= tol_feas {
                    break;
                }
                slope -= a * range;
                passed += 1;
            }
            if passed == candidates.len() {
                return DualEnd::Infeasible;
            }
            let rest = &candidates[passed..];
            let theta_max = rest
                .iter()
                .map(|&(_, slack, a)| (slack + tol_opt) / a)
                .fold(f64::INFINITY, f64::min);
            let mut entering: Option<(usize, f64)> = None;
            for &(v, slack, a) in rest {
                if slack / a <= theta_max && entering.is_none_or(|(_, best)| a > best) {
                    entering = Some((v, a));
                }
            }
            let (q, _) = entering.expect("nonempty candidate list");
            let alpha = self.ftran(q);
            if alpha[r].abs() <= 1e-9 || (alpha[r] - row[q]).abs() > 1e-6 * (1.0 + alpha[r].abs()) {
                retries += 1;
                if retries > 3 {
                    return DualEnd::Stalled;
                }
                self.needs_refactor = true;
                continue;
            }
            *iterations += 1;

            if passed > 0 {
                let mut shift = vec![0.0; m];
                for &(v, _, _) in &candidates[..passed] {
                    let (from, to, status) = match self.status[v] {
                        VarStatus::Lower => (self.lower[v], self.upper[v], VarStatus::Upper),
                        _ => (self.upper[v], self.lower[v], VarStatus::Lower),
                    };
                    let delta = to - from;
                    self.status[v] = status;
                    self.x[v] = to;
                    match self.column_entries(v) {
                        ColumnRef::Unit(rr, sign) => shift[rr] += sign * delta,
                        ColumnRef::Sparse(entries) => {
                            for &(rr, a) in entries {
                                shift[rr] += a * delta;
                            }
                        }
                    }
                }
                let mut moved = vec![0.0; m];
                for (k, &b) in shift.iter().enumerate() {
                    if b == 0.0 {
                        continue;
                    }
                    let col = &self.binv[k * m..(k + 1) * m];
                    for (out, &e) in moved.iter_mut().zip(col) {
                        *out += b * e;
                    }
                }
                for (i, &dx) in moved.iter().enumerate() {
                    let v = self.head[i];
                    self.x[v] -= dx;
                }
            }

            let theta_d = d[q] / row[q];
            for v in 0..n {
                if self.status[v] != VarStatus::Basic && row[v] != 0.0 {
                    d[v] -= theta_d * row[v];
                }
            }
            d[q] = 0.0;
            d[leaving] = -theta_d;

            let step = (self.x[leaving] - bound) / alpha[r];
            for i in 0..m {
                if alpha[i] != 0.0 {
                    let v = self.head[i];
                    self.x[v] -= alpha[i] * step;
                }
            }
            self.x[q] += step;
            self.x[leaving] = bound;
            self.status[leaving] = if to_lower { VarStatus::Lower } else { VarStatus::Upper };
            self.status[q] = VarStatus::Basic;
            self.head[r] = q;
            self.pivot_inverse(r, &alpha);
            self.pivots_since_refactor += 1;
        }
    }

    fn is_dual_feasible(&self) -> bool {
        let cb: Vec<f64> = self.head.iter().map(|&v| self.cost[v]).collect();
        let y = self.btran(&cb);
        (0..self.status.len()).all(|v| {
            if self.lower[v] == self.upper[v] {
                return true;
            }
            let d = self.reduced_cost(v, self.cost[v], &y);
            match self.status[v] {
                VarStatus::Basic => true,
                VarStatus::Lower => d >= -self.options.tol_opt,
                VarStatus::Upper => d <= self.options.tol_opt,
                VarStatus::Super => d.abs() <= self.options.tol_opt,
            }
        })
    }

    fn solution(&self, status: LpStatus, iterations: usize) -> LpSolution {
        let m = self.m;
        let n = self.lp.n_vars();
        let cb: Vec<f64> = self.head.iter().map(|&v| self.cost[v]).collect();
        let duals = self.btran(&cb);
        let primal: Vec<f64> = self.x[m..].to_vec();
        let reduced_costs: Vec<f64> = (0..n)
            .map(|j| {
                if self.status[m + j] == VarStatus::Basic {
                    0.0
                } else {
                    self.reduced_cost(m + j, self.cost[m + j], &duals)
                }
            })
            .collect();
        LpSolution {
            status,
            objective: self.lp.objective_value(&primal),
            primal,
            duals,
            reduced_costs,
            iterations,
        }
    }

    fn run_phase(&mut self, phase: Phase, iterations: &mut usize, limit: usize) -> PhaseEnd {
        let m = self.m;
        let tol_feas = self.options.tol_feas;
        let tol_opt = self.options.tol_opt;
        let tol_piv = self.options.tol_pivot;
        let mut degenerate_run = 0usize;
        let mut bland = false;
        loop {
            if self.needs_refactor || self.pivots_since_refactor >= self.options.refactor_interval {
                self.refactor();
            }
            let cb: Vec<f64> = match phase {
                Phase::One => self
                    .head
                    .iter()
                    .map(|&v| {
                        if self.x[v] < self.lower[v] - tol_feas {
                            -1.0
                        } else if self.x[v] > self.upper[v] + tol_feas {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect(),
                Phase::Two => self.head.iter().map(|&v| self.cost[v]).collect(),
            };
            if phase == Phase::One && cb.iter().all(|&c| c == 0.0) {
                return PhaseEnd::Done;
            }
            if *iterations >= limit {
                return PhaseEnd::Limit;
            }
            let y = self.btran(&cb);

            // Pricing.
            let mut entering: Option<(usize, f64)> = None;
            for v in 0..self.status.len() {
                let st = self.status[v];
                if st == VarStatus::Basic || self.upper[v] - self.lower[v] <= 0.0 {
                    continue;
                }
                let c = if phase == Phase::Two { self.cost[v] } else { 0.0 };
                let d = self.reduced_cost(v, c, &y);
                let attractive = match st {
                    VarStatus::Lower => d < -tol_opt,
                    VarStatus::Upper => d > tol_opt,
                    VarStatus::Super => d.abs() > tol_opt,
                    VarStatus::Basic => false,
                };
                if !attractive {
                    continue;
                }
                if bland {
                    entering = Some((v, d));
                    break;
                }
                if entering.is_none_or(|(_, best)| d.abs() > best.abs()) {
                    entering = Some((v, d));
                }
            }
            let Some((q, dq)) = entering else {
                return match phase {
                    Phase::One => PhaseEnd::Stuck,
                    Phase::Two => PhaseEnd::Done,
                };
            };
            *iterations += 1;

            let dir = match self.status[q] {
                VarStatus::Lower => 1.0,
                VarStatus::Upper => -1.0,
                _ => -dq.signum(),
            };
            let alpha = self.ftran(q);

            // Ratio test. Basic i moves at rate delta_i = -dir * alpha_i.
            // For each candidate: (distance to breakpoint, |rate|, bound hit).
            let mut candidates: Vec<(usize, f64, f64, f64)> = Vec::new();
            for i in 0..m {
                let a = alpha[i];
                if a.abs() <= tol_piv {
                    continue;
                }
                let v = self.head[i];
                let rate = -dir * a;
                let x = self.x[v];
                let (lo, hi) = (self.lower[v], self.upper[v]);
                let target = if rate < 0.0 {
                    match phase {
                        Phase::One if x < lo - tol_feas => None,
                        Phase::One if x > hi + tol_feas => Some(hi),
                        _ => Some(lo),
                    }
                } else {
                    match phase {
                        Phase::One if x > hi + tol_feas => None,
                        Phase::One if x < lo - tol_feas => Some(lo),
                        _ => Some(hi),
                    }
                };
                let Some(t) = target else { continue };
                if !t.is_finite() {
                    continue;
                }
                let dist = if rate < 0.0 { x - t } else { t - x };
                candidates.push((i, dist, rate.abs(), t));
            }
            let range = match self.status[q] {
                VarStatus::Super if dir > 0.0 => self.upper[q] - self.x[q],
                VarStatus::Super => self.x[q] - self.lower[q],
                _ => self.upper[q] - self.lower[q],
            };

            let chosen: Option<(usize, f64, f64)> = if bland {
                let mut best: Option<(usize, f64, f64)> = None;
                for &(i, dist, rate, t) in &candidates {
                    let ratio = (dist / rate).max(0.0);
                    let better = match best {
                        None => true,
                        Some((bi, br, _)) => {
                            ratio < br - 1e-12 || (ratio <= br + 1e-12 && self.head[i] < self.head[bi])
                        }
                    };
                    if better {
                        best = Some((i, ratio, t));
                    }
                }
                best
            } else {
                let theta_max = candidates
                    .iter()
                    .map(|&(_, dist, rate, _)| (dist + tol_feas) / rate)
                    .fold(f64::INFINITY, f64::min);
                let mut best: Option<(usize, f64, f64, f64)> = None;
                for &(i, dist, rate, t) in &candidates {
                    if dist / rate <= theta_max && best.is_none_or(|(_, _, br, _)| rate > br) {
                        best = Some((i, (dist / rate).max(0.0), rate, t));
                    }
                }
                best.map(|(i, ratio, _, t)| (i, ratio, t))
            };

            match chosen {
                Some((_, ratio, _)) if range.is_finite() && range <= ratio => {
                    self.bound_flip(q, dir, range, &alpha);
                    degenerate_run = 0;
                    bland = false;
                }
                None if range.is_finite() => {
                    self.bound_flip(q, dir, range, &alpha);
                    degenerate_run = 0;
                    bland = false;
                }
                None => {
                    if phase == Phase::Two {
                        return PhaseEnd::Unbounded;
                    }
                    // Cannot happen in exact arithmetic; refresh and retry.
                    self.needs_refactor = true;
                    continue;
                }
                Some((r, theta, bound)) => {
                    for i in 0..m {
                        if alpha[i] != 0.0 {
                            let v = self.head[i];
                            self.x[v] -= dir * alpha[i] * theta;
                        }
                    }
                    self.x[q] += dir * theta;
                    let leaving = self.head[r];
                    self.x[leaving] = bound;
                    self.status[leaving] = if bound == self.lower[leaving] {
                        VarStatus::Lower
                    } else {
                        VarStatus::Upper
                    };
                    self.status[q] = VarStatus::Basic;
                    self.head[r] = q;
                    self.pivot_inverse(r, &alpha);
                    self.pivots_since_refactor += 1;
                    if theta <= 1e-12 {
                        degenerate_run += 1;
                        if degenerate_run >= self.options.bland_after {
                            bland = true;
                        }
                    } else {
                        degenerate_run = 0;
                        bland = false;
                    }
                }
            }
        }
    }

    fn bound_flip(&mut self, q: usize, dir: f64, range: f64, alpha: &[f64]) {
        for (i, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                let v = self.head[i];
                self.x[v] -= dir * a * range;
            }
        }
        if dir > 0.0 {
            self.status[q] = VarStatus::Upper;
            self.x[q] = self.upper[q];
        } else {
            self.status[q] = VarStatus::Lower;
            self.x[q] = self.lower[q];
        }
    }
}

enum ColumnRef<'a> {
    Unit(usize, f64),
    Sparse(&'a [(usize, f64)]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum DualEnd {
    Optimal,
    Infeasible,
    Stalled,
    Limit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PhaseEnd {
    Done,
    Stuck,
    Unbounded,
    Limit,
}
