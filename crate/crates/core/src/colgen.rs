//! Column generation: the restricted master loop and the K-shortest-path
//! pricing sweep over the feature graph.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::BinnedDataset;
use crate::error::{OmtError, Result};
use crate::feature_graph::FeatureGraph;
use crate::master::{
    reduced_cost_with_sum, relative_gap, DualVector, MasterProblem, MipOptions, MipSolution, RmpSession, SideConstraint,
};
use crate::rules::{Rule, RuleConfig};
use crate::simplex::{LpStatus, SimplexOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct CgConfig {
    /// Partial paths kept per graph node during pricing.
    pub k: usize,
    /// Pricing rounds before giving up on convergence.
    pub max_iterations: usize,
    pub max_columns: usize,
    /// Pricing stops when no column has reduced cost below `-dual_tolerance`.
    pub dual_tolerance: f64,
    /// Stop when the RMP objective improves by less than `stall_tolerance`
    /// over this many iterations.
    pub convergence_window: usize,
    pub stall_tolerance: f64,
    /// Wall-clock budget for the whole run. Checked between CG iterations;
    /// whatever remains bounds the MIP.
    pub time_limit: Option<Duration>,
    pub simplex: SimplexOptions,
    pub mip: MipOptions,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            k: 1000,
            max_iterations: 40,
            max_columns: 10_000,
            dual_tolerance: 1e-6,
            convergence_window: 3,
            stall_tolerance: 1e-6,
            time_limit: None,
            simplex: SimplexOptions::default(),
            mip: MipOptions::default(),
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.max_columns == 0 || self.convergence_window == 0 {
            return Err(OmtError::config(
                "K, the column limit and the convergence window must be positive",
            ));
        }
        if self.dual_tolerance.is_nan() || self.dual_tolerance < 0.0 {
            return Err(OmtError::config("dual tolerance must be non-negative"));
        }
        Ok(())
    }
}

/// Minimum support as a sample count: `ceil(fraction * n)`, at least 1.
pub fn min_support_count(fraction: f64, n_samples: usize) -> usize {
    ((fraction * n_samples as f64 - 1e-9).ceil() as usize).max(1)
}

#[derive(Clone, Debug)]
pub struct PricedRule {
    pub rule: Rule,
    pub reduced_cost: f64,
}

/// Entry of a bounded best-list: ordered by reduced cost, then signature.
struct Entry {
    rc: f64,
    lambda_sum: f64,
    rule: Rule,
}

impl Entry {
    fn key_cmp(&self, other: &Entry) -> Ordering {
        self.rc
            .total_cmp(&other.rc)
            .then_with(|| self.rule.signature().cmp(other.rule.signature()))
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// The `k` smallest entries seen so far (a max-heap of the survivors).
struct BestList {
    k: usize,
    heap: BinaryHeap<Entry>,
}

impl BestList {
    fn new(k: usize) -> BestList {
        BestList {
            k,
            heap: BinaryHeap::new(),
        }
    }

    /// Whether an entry with this reduced cost could still be kept.
    fn admits(&self, rc: f64) -> bool {
        self.heap.len() < self.k || self.heap.peek().is_some_and(|worst| rc <= worst.rc)
    }

    fn insert(&mut self, entry: Entry) {
        if self.heap.len() < self.k {
            self.heap.push(entry);
        } else if let Some(worst) = self.heap.peek() {
            if entry < *worst {
                self.heap.pop();
                self.heap.push(entry);
            }
        }
    }

    fn into_sorted(self) -> Vec<Entry> {
        self.heap.into_sorted_vec()
    }
}

/// Sweeps the graph from source to sink keeping the `k` best partial
/// paths per node by reduced cost. Every partial path is also offered to
/// the sink list as a finished rule (remaining layers read as SKIP).
///
/// Returns at most `k` distinct rules with reduced cost below
/// `-dual_tolerance`, ascending.
pub fn ksp(
    graph: &FeatureGraph,
    data: &BinnedDataset,
    duals: &DualVector,
    side_constraints: &[SideConstraint],
    rules: &RuleConfig,
    k: usize,
    dual_tolerance: f64,
) -> Vec<PricedRule> {
    let root = Rule::root(data, rules);
    let root_sum: f64 = root.cover().iter().map(|&i| duals.lambda[i as usize]).sum();
    let root_rc = reduced_cost_with_sum(&root, root_sum, duals, side_constraints);

    let mut lists: Vec<Vec<Entry>> = (0..graph.n_nodes()).map(|_| Vec::new()).collect();
    let mut pending: Vec<Option<BestList>> = (0..graph.n_nodes()).map(|_| None).collect();
    lists[graph.source()].push(Entry {
        rc: root_rc,
        lambda_sum: root_sum,
        rule: root,
    });

    let mut sink = BestList::new(k);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();

    let order = std::iter::once(graph.source()).chain(graph.layers().iter().flat_map(|l| l.nodes.clone()));
    for node in order {
        if let Some(list) = pending[node].take() {
            lists[node] = list.into_sorted();
        }
        let entries = std::mem::take(&mut lists[node]);
        let children = graph.children(node);
        for entry in entries {
            if entry.rc < -dual_tolerance
                && sink.admits(entry.rc)
                && entry.rule.satisfies_path_constraints(rules)
                && !seen.contains(entry.rule.signature())
            {
                seen.insert(entry.rule.signature().to_vec());
                sink.insert(Entry {
                    rc: entry.rc,
                    lambda_sum: entry.lambda_sum,
                    rule: entry.rule.clone(),
                });
            }
            for child in children.clone() {
                if child == graph.sink() {
                    continue;
                }
                let slot = pending[child].get_or_insert_with(|| BestList::new(k));
                let extended = if graph.node(child).is_skip() {
                    let rule = entry
                        .rule
                        .extend(graph, child, data, rules)
                        .expect("SKIP extension is always feasible");
                    Some(Entry {
                        rc: entry.rc,
                        lambda_sum: entry.lambda_sum,
                        rule,
                    })
                } else {
                    entry
                        .rule
                        .extend_with_duals(graph, child, data, rules, Some(&duals.lambda))
                        .map(|(rule, lambda_sum)| Entry {
                            rc: reduced_cost_with_sum(&rule, lambda_sum, duals, side_constraints),
                            lambda_sum,
                            rule,
                        })
                };
                if let Some(e) = extended {
                    if slot.admits(e.rc) {
                        slot.insert(e);
                    }
                }
            }
        }
    }

    sink.into_sorted()
        .into_iter()
        .map(|e| PricedRule {
            rule: e.rule,
            reduced_cost: e.rc,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergedBy {
    DualFeasible,
    Stalled,
    IterationLimit,
    ColumnLimit,
    TimeLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub rmp_objective: f64,
    /// Most negative reduced cost found; `None` when pricing found nothing.
    pub min_rc: Option<f64>,
    pub columns_added: usize,
    pub pool_size: usize,
    pub elapsed_ms: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgReport {
    pub iterations_run: usize,
    pub columns_generated: usize,
    pub nu_lp: f64,
    pub nu_ip: f64,
    pub gap: f64,
    pub converged_by: ConvergedBy,
    pub log: Vec<IterationLog>,
    pub mip_nodes: usize,
    pub mip_status: crate::master::MipStatus,
    pub elapsed_ms: u128,
}

pub struct CgOutcome {
    pub master: MasterProblem,
    pub report: CgReport,
    pub mip: MipSolution,
}

/// Runs column generation from the pool already in `master` (usually
/// empty), then solves the Master-MIP over the generated pool.
pub fn run_cg(
    graph: &FeatureGraph,
    data: &BinnedDataset,
    rules: &RuleConfig,
    config: &CgConfig,
    master: MasterProblem,
) -> Result<CgOutcome> {
    config.validate()?;
    rules.validate(data)?;
    if master.n_samples() != data.n_samples() {
        return Err(OmtError::config("penalty vector length differs from the sample count"));
    }
    let start = Instant::now();
    let mut mp = master;
    let mut session = RmpSession::new(&mp, config.simplex)?;
    let mut signatures: HashSet<Vec<usize>> = mp.pool.iter().map(|r| r.signature().to_vec()).collect();
    let initial_pool = mp.pool.len();
    let mut history: Vec<f64> = Vec::new();
    let mut log = Vec::new();
    let mut iteration = 0usize;

    let converged_by = loop {
        let sol = session.solve();
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::IterationLimit => return Err(OmtError::LpIterationLimit { iteration }),
            s => return Err(OmtError::Model(format!("restricted master LP is {s:?}"))),
        }
        history.push(sol.objective);

        if iteration >= config.max_iterations {
            break ConvergedBy::IterationLimit;
        }
        if mp.pool.len() >= config.max_columns {
            break ConvergedBy::ColumnLimit;
        }
        if config.time_limit.is_some_and(|t| start.elapsed() >= t) {
            break ConvergedBy::TimeLimit;
        }
        let w = config.convergence_window;
        if history.len() > w && history[history.len() - 1 - w] - sol.objective < config.stall_tolerance {
            break ConvergedBy::Stalled;
        }

        let duals = DualVector::from_row_duals(mp.n_samples(), &sol.duals);
        let priced = ksp(
            graph,
            data,
            &duals,
            &mp.side_constraints,
            rules,
            config.k,
            config.dual_tolerance,
        );
        let min_rc = priced.first().map(|p| p.reduced_cost);
        let mut added = 0;
        for p in priced {
            if mp.pool.len() >= config.max_columns {
                break;
            }
            if signatures.insert(p.rule.signature().to_vec()) {
                mp.pool.push(p.rule);
                added += 1;
            }
        }
        iteration += 1;
        let entry = IterationLog {
            iteration,
            rmp_objective: sol.objective,
            min_rc,
            columns_added: added,
            pool_size: mp.pool.len(),
            elapsed_ms: start.elapsed().as_millis(),
        };
        log::info!(
            "{}, {:.6}, {}, {}, {}, {}",
            entry.iteration,
            entry.rmp_objective,
            entry.min_rc.map_or("none".to_string(), |v| format!("{v:.6}")),
            entry.columns_added,
            entry.pool_size,
            entry.elapsed_ms
        );
        log.push(entry);
        if added == 0 {
            break ConvergedBy::DualFeasible;
        }
        session.sync(&mp);
    };

    let nu_lp = *history.last().expect("at least one RMP solve");
    let mut mip_options = config.mip;
    if let Some(limit) = config.time_limit {
        let remaining = limit.saturating_sub(start.elapsed());
        mip_options.time_limit = Some(mip_options.time_limit.map_or(remaining, |t| t.min(remaining)));
    }
    let mip = session.solve_mip(&mp, &mip_options)?;
    let report = CgReport {
        iterations_run: iteration,
        columns_generated: mp.pool.len() - initial_pool,
        nu_lp,
        nu_ip: mip.objective,
        gap: relative_gap(mip.objective, nu_lp),
        converged_by,
        log,
        mip_nodes: mip.nodes,
        mip_status: mip.status,
        elapsed_ms: start.elapsed().as_millis(),
    };
    log::info!(
        "column generation finished: {:?}, nu_lp {:.6}, nu_ip {:.6}, gap {:.4}",
        report.converged_by,
        report.nu_lp,
        report.nu_ip,
        report.gap
    );
    Ok(CgOutcome {
        master: mp,
        report,
        mip,
    })
}
