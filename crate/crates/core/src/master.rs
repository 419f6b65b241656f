//! The set-partitioning master problem over a pool of rules: LP assembly,
//! duals and reduced costs, side constraints, and branch and bound for the
//! final integer selection.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::rc::Rc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::{BinnedDataset, Labels};
use crate::error::{OmtError, Result};
use crate::rules::{MetricKind, Rule};
use crate::simplex::{Basis, LinearProgram, LpSolution, LpStatus, RowSense, SimplexOptions, SimplexSolver};

/// A linear row over the pool whose coefficient is a function of the rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SideConstraint {
    /// `sum_j [tp_j - delta (tp_j + (fp_j + fn_j) / 2)] z_j >= 0`, the
    /// linear form of `F1 >= delta`.
    MinF1 { delta: f64, positive_class: u32 },
    /// `sum_j disparity_j z_j <= delta`, where the disparity is the spread
    /// of group positive rates within the rule.
    FairnessBudget { delta: f64, positive_class: u32 },
}

impl SideConstraint {
    pub fn min_f1(delta: f64, positive_class: u32) -> Result<SideConstraint> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(OmtError::config(format!("F1 threshold {delta} must lie in (0, 1)")));
        }
        Ok(SideConstraint::MinF1 { delta, positive_class })
    }

    pub fn fairness_budget(delta: f64, positive_class: u32) -> Result<SideConstraint> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(OmtError::config(format!(
                "fairness budget {delta} must be non-negative"
            )));
        }
        Ok(SideConstraint::FairnessBudget { delta, positive_class })
    }

    pub fn coefficient(&self, rule: &Rule) -> f64 {
        match *self {
            SideConstraint::MinF1 { delta, positive_class } => {
                let c = rule.confusion(positive_class);
                let tp = c.tp as f64;
                tp - delta * (tp + 0.5 * (c.fp as f64 + c.fn_ as f64))
            }
            SideConstraint::FairnessBudget { positive_class, .. } => rule.disparity(positive_class),
        }
    }

    pub fn sense(&self) -> RowSense {
        match self {
            SideConstraint::MinF1 { .. } => RowSense::Ge,
            SideConstraint::FairnessBudget { .. } => RowSense::Le,
        }
    }

    pub fn rhs(&self) -> f64 {
        match *self {
            SideConstraint::MinF1 { .. } => 0.0,
            SideConstraint::FairnessBudget { delta, .. } => delta,
        }
    }

    /// Whether `activity` satisfies the row within `tol`.
    pub fn holds(&self, activity: f64, tol: f64) -> bool {
        match self.sense() {
            RowSense::Ge => activity >= self.rhs() - tol,
            RowSense::Le => activity <= self.rhs() + tol,
            RowSense::Eq => (activity - self.rhs()).abs() <= tol,
        }
    }
}

/// Per-sample penalty for leaving a sample uncovered: twice the largest
/// loss one sample can contribute under `metric`.
pub fn default_penalties(data: &BinnedDataset, metric: MetricKind) -> Vec<f64> {
    let c = match (data.labels(), metric) {
        (Labels::Real(y), MetricKind::SquaredError | MetricKind::AbsoluteError) => {
            let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = if hi > lo { hi - lo } else { 1.0 };
            if metric == MetricKind::SquaredError {
                2.0 * range * range
            } else {
                2.0 * range
            }
        }
        _ => 2.0,
    };
    vec![c; data.n_samples()]
}

#[derive(Clone, Debug)]
pub struct MasterProblem {
    pub pool: Vec<Rule>,
    pub penalties: Vec<f64>,
    pub leaf_budget: usize,
    pub side_constraints: Vec<SideConstraint>,
}

impl MasterProblem {
    pub fn new(penalties: Vec<f64>, leaf_budget: usize, side_constraints: Vec<SideConstraint>) -> MasterProblem {
        MasterProblem {
            pool: Vec::new(),
            penalties,
            leaf_budget,
            side_constraints,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.penalties.len()
    }

    pub fn cardinality_row(&self) -> usize {
        self.n_samples()
    }

    /// Constraint entries of a rule column: its coverage rows, the
    /// cardinality row and any non-zero side-constraint coefficients.
    pub fn column_entries(&self, rule: &Rule) -> Vec<(usize, f64)> {
        let n = self.n_samples();
        let mut entries: Vec<(usize, f64)> = rule.cover().iter().map(|&i| (i as usize, 1.0)).collect();
        entries.push((n, 1.0));
        for (m, side) in self.side_constraints.iter().enumerate() {
            let a = side.coefficient(rule);
            if a != 0.0 {
                entries.push((n + 1 + m, a));
            }
        }
        entries
    }

    /// The LP relaxation over the current pool: rule columns first, then
    /// one slack per sample; coverage rows, the cardinality row, then side
    /// rows.
    pub fn build_rmp(&self) -> LinearProgram {
        let n = self.n_samples();
        let mut lp = LinearProgram::new();
        for _ in 0..n {
            lp.add_row(RowSense::Eq, 1.0);
        }
        lp.add_row(RowSense::Le, self.leaf_budget as f64);
        for side in &self.side_constraints {
            lp.add_row(side.sense(), side.rhs());
        }
        for rule in &self.pool {
            lp.add_variable(rule.cost(), 0.0, f64::INFINITY, self.column_entries(rule));
        }
        for (i, &c) in self.penalties.iter().enumerate() {
            lp.add_variable(c, 0.0, f64::INFINITY, vec![(i, 1.0)]);
        }
        lp
    }

    /// Objective and uncovered samples of an integer selection, or `None`
    /// when the selection breaks the partition, leaf budget or side rows.
    pub fn evaluate_selection(&self, selected: &[usize]) -> Option<(f64, Vec<u32>)> {
        if selected.len() > self.leaf_budget {
            return None;
        }
        let mut covered = vec![false; self.n_samples()];
        let mut objective = 0.0;
        for &j in selected {
            let rule = &self.pool[j];
            objective += rule.cost();
            for &i in rule.cover() {
                if std::mem::replace(&mut covered[i as usize], true) {
                    return None;
                }
            }
        }
        for side in &self.side_constraints {
            let act: f64 = selected.iter().map(|&j| side.coefficient(&self.pool[j])).sum();
            if !side.holds(act, 1e-9) {
                return None;
            }
        }
        let slack: Vec<u32> = (0..self.n_samples() as u32).filter(|&i| !covered[i as usize]).collect();
        objective += slack.iter().map(|&i| self.penalties[i as usize]).sum::<f64>();
        Some((objective, slack))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualVector {
    pub lambda: Vec<f64>,
    pub mu: f64,
    pub tau: Vec<f64>,
}

impl DualVector {
    /// Splits the row multipliers of an RMP solution.
    pub fn from_row_duals(n_samples: usize, duals: &[f64]) -> DualVector {
        DualVector {
            lambda: duals[..n_samples].to_vec(),
            mu: duals[n_samples],
            tau: duals[n_samples + 1..].to_vec(),
        }
    }

    /// Duals of the all-slack basis: `lambda = c`, `mu = 0`, `tau = 0`.
    pub fn slack_basis(mp: &MasterProblem) -> DualVector {
        DualVector {
            lambda: mp.penalties.clone(),
            mu: 0.0,
            tau: vec![0.0; mp.side_constraints.len()],
        }
    }
}

/// `loss - (sum of lambda over the cover + mu + sum_m coef_m tau_m)`.
pub fn reduced_cost(rule: &Rule, duals: &DualVector, side_constraints: &[SideConstraint]) -> f64 {
    let lambda_sum: f64 = rule.cover().iter().map(|&i| duals.lambda[i as usize]).sum();
    reduced_cost_with_sum(rule, lambda_sum, duals, side_constraints)
}

pub(crate) fn reduced_cost_with_sum(
    rule: &Rule,
    lambda_sum: f64,
    duals: &DualVector,
    side_constraints: &[SideConstraint],
) -> f64 {
    let side: f64 = side_constraints
        .iter()
        .zip(&duals.tau)
        .map(|(s, t)| s.coefficient(rule) * t)
        .sum();
    rule.cost() - (lambda_sum + duals.mu + side)
}

/// Incrementally grown restricted master LP with warm starts.
pub struct RmpSession {
    solver: SimplexSolver,
    /// LP variable index of each pool column.
    pool_vars: Vec<usize>,
}

impl RmpSession {
    pub fn new(mp: &MasterProblem, options: SimplexOptions) -> Result<RmpSession> {
        let lp = mp.build_rmp();
        let solver = SimplexSolver::new(lp, options)?;
        Ok(RmpSession {
            solver,
            pool_vars: (0..mp.pool.len()).collect(),
        })
    }

    /// Adds the rules `mp.pool[from..]` as new columns.
    pub fn sync(&mut self, mp: &MasterProblem) {
        for rule in &mp.pool[self.pool_vars.len()..] {
            let var = self
                .solver
                .add_column(rule.cost(), 0.0, f64::INFINITY, mp.column_entries(rule));
            self.pool_vars.push(var);
        }
    }

    pub fn solve(&mut self) -> LpSolution {
        self.solver.solve()
    }

    pub fn pool_value(&self, solution: &LpSolution, j: usize) -> f64 {
        solution.primal[self.pool_vars[j]]
    }

    pub fn basis(&self) -> Basis {
        self.solver.basis()
    }

    pub fn lp(&self) -> &LinearProgram {
        self.solver.lp()
    }

    /// Solves the Master-MIP over the session's pool, starting from the
    /// last RMP basis.
    pub fn solve_mip(&self, mp: &MasterProblem, options: &MipOptions) -> Result<MipSolution> {
        let basis = self.solver.basis();
        branch_and_bound(mp, self.solver.lp().clone(), &self.pool_vars, Some(&basis), options)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MipStatus {
    Optimal,
    TimeLimit,
    NodeLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MipSolution {
    /// Pool indices with `z_j = 1`, ascending.
    pub selected: Vec<usize>,
    pub slack_samples: Vec<u32>,
    pub objective: f64,
    /// Objective of the LP relaxation over the pool.
    pub bound: f64,
    pub gap: f64,
    pub status: MipStatus,
    pub nodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MipOptions {
    pub time_limit: Option<Duration>,
    pub node_limit: usize,
    pub simplex: SimplexOptions,
}

impl Default for MipOptions {
    fn default() -> Self {
        MipOptions {
            time_limit: None,
            node_limit: 100_000,
            simplex: SimplexOptions::default(),
        }
    }
}

/// Relative gap `(ip - lp) / ip`, zero when `ip` is not positive.
pub fn relative_gap(ip: f64, lp: f64) -> f64 {
    if ip > 0.0 {
        ((ip - lp) / ip).max(0.0)
    } else {
        0.0
    }
}

struct Node {
    bound: f64,
    seq: usize,
    fixings: Vec<(usize, bool)>,
    basis: Option<Rc<Basis>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    /// Max-heap order: the smallest bound, then the oldest node, is greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.seq.cmp(&self.seq))
    }
}

const INTEGRALITY_TOL: f64 = 1e-6;
const PRUNE_TOL: f64 = 1e-9;

/// Best-first branch and bound over the pool with `z_j` in `{0, 1}`.
pub fn solve_master_mip(mp: &MasterProblem, options: &MipOptions) -> Result<MipSolution> {
    let vars: Vec<usize> = (0..mp.pool.len()).collect();
    branch_and_bound(mp, mp.build_rmp(), &vars, None, options)
}

/// Branch and bound on an RMP whose pool column `j` is LP variable
/// `vars[j]`, optionally warm-started from a basis of that LP.
pub(crate) fn branch_and_bound(
    mp: &MasterProblem,
    mut lp: LinearProgram,
    vars: &[usize],
    warm: Option<&Basis>,
    options: &MipOptions,
) -> Result<MipSolution> {
    let start = Instant::now();
    let p = mp.pool.len();
    for &v in vars {
        lp.set_bounds(v, 0.0, 1.0);
    }
    let mut solver = SimplexSolver::new(lp, options.simplex)?;
    if let Some(b) = warm {
        solver.set_basis(b);
    }

    let root = solver.solve();
    match root.status {
        LpStatus::Optimal => {}
        LpStatus::IterationLimit => return Err(OmtError::Model("Master-MIP root LP hit its iteration limit".into())),
        s => return Err(OmtError::Model(format!("Master-MIP root LP is {s:?}"))),
    }
    let root_bound = root.objective;

    // Incumbent: the all-slack selection, improved by greedy roundings.
    let mut best_sel: Vec<usize> = Vec::new();
    let mut best_obj = mp.penalties.iter().sum::<f64>();
    let offer = |sel: Vec<usize>, best_sel: &mut Vec<usize>, best_obj: &mut f64| {
        if let Some((obj, _)) = mp.evaluate_selection(&sel) {
            if obj < *best_obj - PRUNE_TOL {
                *best_obj = obj;
                *best_sel = sel;
            }
        }
    };
    let ratio = |j: usize| mp.pool[j].cost() / mp.pool[j].support().max(1) as f64;
    let mut by_ratio: Vec<usize> = (0..p).collect();
    by_ratio.sort_by(|&a, &b| ratio(a).total_cmp(&ratio(b)).then(a.cmp(&b)));
    offer(greedy_selection(mp, &by_ratio), &mut best_sel, &mut best_obj);
    let mut by_lp: Vec<usize> = (0..p).filter(|&j| root.primal[vars[j]] > INTEGRALITY_TOL).collect();
    by_lp.sort_by(|&a, &b| {
        root.primal[vars[b]]
            .total_cmp(&root.primal[vars[a]])
            .then(ratio(a).total_cmp(&ratio(b)))
            .then(a.cmp(&b))
    });
    offer(greedy_selection(mp, &by_lp), &mut best_sel, &mut best_obj);

    // With integral data every objective value is an integer, so nodes
    // whose bound exceeds `incumbent - 1` cannot improve.
    let integral = mp.pool.iter().all(|r| is_integer(r.cost())) && mp.penalties.iter().all(|&c| is_integer(c));
    let cutoff = |incumbent: f64| {
        if integral {
            incumbent - 1.0 + 1e-6
        } else {
            incumbent - PRUNE_TOL
        }
    };

    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    let mut nodes = 0usize;
    let mut status = MipStatus::Optimal;
    let mut pending = Some((root, Rc::new(solver.basis())));
    let mut current_fixings: Vec<(usize, bool)> = Vec::new();

    loop {
        let (sol, basis) = match pending.take() {
            Some(x) => x,
            None => {
                let Some(node) = heap.pop() else { break };
                let node: Node = node;
                if node.bound > cutoff(best_obj) {
                    heap.clear();
                    break;
                }
                if options.time_limit.is_some_and(|t| start.elapsed() >= t) {
                    status = MipStatus::TimeLimit;
                    break;
                }
                if nodes >= options.node_limit {
                    status = MipStatus::NodeLimit;
                    break;
                }
                for &(j, _) in &current_fixings {
                    solver.set_bounds(vars[j], 0.0, 1.0);
                }
                for &(j, one) in &node.fixings {
                    if one {
                        solver.set_bounds(vars[j], 1.0, 1.0);
                    } else {
                        solver.set_bounds(vars[j], 0.0, 0.0);
                    }
                }
                current_fixings = node.fixings.clone();
                if let Some(b) = &node.basis {
                    solver.set_basis(b);
                }
                let sol = solver.solve();
                match sol.status {
                    LpStatus::Optimal => {}
                    LpStatus::Infeasible => {
                        nodes += 1;
                        continue;
                    }
                    s => {
                        log::warn!("branch-and-bound node LP ended {s:?}; node dropped");
                        nodes += 1;
                        continue;
                    }
                }
                (sol, Rc::new(solver.basis()))
            }
        };
        nodes += 1;
        if sol.objective > cutoff(best_obj) {
            continue;
        }
        // Branching candidate: most fractional, then largest cover.
        let mut branch: Option<usize> = None;
        for j in 0..p {
            let z = sol.primal[vars[j]];
            if z.min(1.0 - z) <= INTEGRALITY_TOL {
                continue;
            }
            branch = match branch {
                None => Some(j),
                Some(b) => {
                    let (db, dj) = ((sol.primal[vars[b]] - 0.5).abs(), (z - 0.5).abs());
                    if dj < db - 1e-12 || (dj <= db + 1e-12 && mp.pool[j].support() > mp.pool[b].support()) {
                        Some(j)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        match branch {
            None => {
                let sel: Vec<usize> = (0..p).filter(|&j| sol.primal[vars[j]] > 0.5).collect();
                offer(sel, &mut best_sel, &mut best_obj);
            }
            Some(j) => {
                for one in [true, false] {
                    let mut fixings = current_fixings.clone();
                    fixings.push((j, one));
                    heap.push(Node {
                        bound: sol.objective,
                        seq,
                        fixings,
                        basis: Some(Rc::clone(&basis)),
                    });
                    seq += 1;
                }
            }
        }
    }

    best_sel.sort_unstable();
    let (objective, slack_samples) = mp
        .evaluate_selection(&best_sel)
        .expect("incumbent is always a feasible selection");
    Ok(MipSolution {
        selected: best_sel,
        slack_samples,
        objective,
        bound: root_bound,
        gap: relative_gap(objective, root_bound),
        status,
        nodes,
    })
}

fn is_integer(v: f64) -> bool {
    (v - v.round()).abs() <= 1e-9
}

/// Accepts rules in the given order while they are disjoint from earlier
/// picks, fit the leaf budget, beat leaving their samples uncovered and
/// keep every side row satisfied.
fn greedy_selection(mp: &MasterProblem, order: &[usize]) -> Vec<usize> {
    let mut covered = vec![false; mp.n_samples()];
    let mut activity = vec![0.0; mp.side_constraints.len()];
    let mut selected = Vec::new();
    for &j in order {
        if selected.len() >= mp.leaf_budget {
            break;
        }
        let rule = &mp.pool[j];
        if rule.support() == 0 || rule.cover().iter().any(|&i| covered[i as usize]) {
            continue;
        }
        let saved: f64 = rule.cover().iter().map(|&i| mp.penalties[i as usize]).sum();
        if rule.cost() >= saved {
            continue;
        }
        let next: Vec<f64> = mp
            .side_constraints
            .iter()
            .zip(&activity)
            .map(|(s, a)| a + s.coefficient(rule))
            .collect();
        if !mp.side_constraints.iter().zip(&next).all(|(s, &a)| s.holds(a, 1e-9)) {
            continue;
        }
        activity = next;
        for &i in rule.cover() {
            covered[i as usize] = true;
        }
        selected.push(j);
    }
    selected
}
