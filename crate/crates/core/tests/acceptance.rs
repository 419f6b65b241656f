//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.
//!
//! Each check recomputes what it verifies from scratch (path enumeration,
//! rule covers and losses, LP vertices, partition membership) rather than
//! trusting the library's own bookkeeping.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use omt_core::feature_graph::NodeRole;
use omt_core::pipeline::FairnessConfig;
use omt_core::pipeline::PathBudgetConfig;
use omt_core::{
    build_problem, enumerate_paths, evaluate, ksp, load_csv, run_cg, solve_lp, solve_master_mip, split_indices,
    tune_bins, AttributeConstraints, BinnedDataset, ConstraintsConfig, ConvergedBy, DualVector, FeatureDomain,
    FeatureGraph, Labels, LinearProgram, LpStatus, MasterProblem, MipOptions, MipSolution, MultiwayTree, RawDataset,
    RowSense, SimplexOptions, SplitFractions, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Shared helpers

fn load(name: &str) -> RawDataset {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(format!("{name}.csv"));
    load_csv(&path, "class", &Default::default()).unwrap_or_else(|e| panic!("loading {}: {e}", path.display()))
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// A feasible source-to-sink path found by brute force.
struct Path {
    nodes: Vec<usize>,
    cover: Vec<usize>,
}

/// Every path of `graph` with at most `max_length` value nodes and, when it
/// tests anything, at least `min_support` covered samples. Covers are
/// recomputed per sample from node ranges.
fn brute_force_paths(graph: &FeatureGraph, data: &BinnedDataset, max_length: usize, min_support: usize) -> Vec<Path> {
    fn walk(
        graph: &FeatureGraph,
        data: &BinnedDataset,
        node: usize,
        nodes: &mut Vec<usize>,
        max_length: usize,
        min_support: usize,
        out: &mut Vec<Path>,
    ) {
        if node == graph.sink() {
            let cover: Vec<usize> = (0..data.n_samples())
                .filter(|&i| {
                    nodes.iter().all(|&v| {
                        let n = graph.node(v);
                        let code = data.code(n.feature.unwrap(), i);
                        n.first <= code && code <= n.last
                    })
                })
                .collect();
            if nodes.is_empty() || cover.len() >= min_support {
                out.push(Path {
                    nodes: nodes.clone(),
                    cover,
                });
            }
            return;
        }
        for child in graph.children(node) {
            let is_value = graph.node(child).role == NodeRole::Value;
            if is_value {
                if nodes.len() == max_length {
                    continue;
                }
                nodes.push(child);
            }
            walk(graph, data, child, nodes, max_length, min_support, out);
            if is_value {
                nodes.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(
        graph,
        data,
        graph.source(),
        &mut Vec::new(),
        max_length,
        min_support,
        &mut out,
    );
    out
}

fn class_ids(data: &BinnedDataset) -> (&[u32], usize) {
    match data.labels() {
        Labels::Classes { ids, n_classes } => (ids, *n_classes as usize),
        Labels::Real(_) => panic!("classification data expected"),
    }
}

/// Majority class of a cover (lowest id on ties) and its count.
fn majority(data: &BinnedDataset, cover: &[usize]) -> (u32, usize) {
    let (ids, k) = class_ids(data);
    let mut counts = vec![0usize; k];
    for &i in cover {
        counts[ids[i] as usize] += 1;
    }
    let best = (0..k)
        .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    (best as u32, counts[best])
}

/// Objective coefficient of a path under misclassification loss.
fn path_cost(data: &BinnedDataset, path: &Path, condition_cost: f64) -> f64 {
    let (_, hits) = majority(data, &path.cover);
    (path.cover.len() - hits) as f64 + condition_cost * path.nodes.len() as f64
}

fn path_reduced_cost(data: &BinnedDataset, path: &Path, condition_cost: f64, duals: &DualVector) -> f64 {
    let lambda: f64 = path.cover.iter().map(|&i| duals.lambda[i]).sum();
    path_cost(data, path, condition_cost) - lambda - duals.mu
}

/// Partition check of an integer solution: every sample lies in exactly
/// one selected rule or in slack, never both. Membership is recomputed
/// from the graph nodes of each selected rule.
fn partition_holds(graph: &FeatureGraph, data: &BinnedDataset, pool: &[omt_core::Rule], mip: &MipSolution) -> bool {
    let mut hits = vec![0usize; data.n_samples()];
    for &j in &mip.selected {
        for (i, h) in hits.iter_mut().enumerate() {
            let inside = pool[j].nodes().iter().all(|&v| {
                let n = graph.node(v);
                let code = data.code(n.feature.unwrap(), i);
                n.first <= code && code <= n.last
            });
            *h += usize::from(inside);
        }
    }
    let mut slack = vec![false; data.n_samples()];
    for &i in &mip.slack_samples {
        slack[i as usize] = true;
    }
    hits.iter().zip(&slack).all(|(&h, &s)| if s { h == 0 } else { h == 1 })
}

/// The same check on an assembled tree, reading each rule's conditions.
fn tree_partition_holds(tree: &MultiwayTree, data: &BinnedDataset, mip: &MipSolution) -> bool {
    if tree.rules.len() != mip.selected.len() {
        return false;
    }
    let mut slack = vec![false; data.n_samples()];
    for &i in &mip.slack_samples {
        slack[i as usize] = true;
    }
    (0..data.n_samples()).all(|i| {
        let hits = tree
            .rules
            .iter()
            .filter(|r| {
                r.conditions.iter().all(|c| {
                    let code = data.code(c.feature, i);
                    c.first <= code && code <= c.last
                })
            })
            .count();
        hits == usize::from(!slack[i])
    })
}

#[derive(Default)]
struct PartitionLog {
    checked: usize,
    failures: Vec<String>,
}

impl PartitionLog {
    fn record(&mut self, name: impl Into<String>, ok: bool) {
        self.checked += 1;
        if !ok {
            self.failures.push(name.into());
        }
    }
}

fn random_domains(rng: &mut ChaCha8Rng, max_features: usize) -> Vec<FeatureDomain> {
    let k = rng.gen_range(1..=max_features);
    (0..k)
        .map(|f| {
            let name = format!("f{f}");
            if rng.gen_bool(0.5) {
                FeatureDomain::plain(name, rng.gen_range(1..=3))
            } else {
                FeatureDomain::cumulative(name, rng.gen_range(1..=3))
            }
        })
        .collect()
}

fn random_graph(rng: &mut ChaCha8Rng, domains: &[FeatureDomain]) -> FeatureGraph {
    let mut order: Vec<usize> = (0..domains.len()).collect();
    order.shuffle(rng);
    FeatureGraph::build(domains, &order, &AttributeConstraints::default()).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Path counts

fn criterion_1() -> Outcome {
    fn dfs(graph: &FeatureGraph, node: usize, length: usize, limit: usize, all: &mut u128, limited: &mut u128) {
        if node == graph.sink() {
            *all += 1;
            *limited += u128::from(length <= limit);
            return;
        }
        for child in graph.children(node) {
            let step = usize::from(graph.node(child).role == NodeRole::Value);
            dfs(graph, child, length + step, limit, all, limited);
        }
    }

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..200 {
        let domains = random_domains(&mut rng, 4);
        let graph = random_graph(&mut rng, &domains);
        let d = rng.gen_range(1..=domains.len());
        let (mut all, mut limited) = (0u128, 0u128);
        dfs(&graph, graph.source(), 0, d, &mut all, &mut limited);
        // Closed form of the unconstrained count: one value node or SKIP per layer.
        let product: u128 = domains.iter().map(|dm| dm.values.len() as u128 + 1).product();
        let full = graph.count_paths(None);
        let capped = graph.count_paths(Some(d));
        if full.value != all || all != product || capped.value != limited || full.saturated || capped.saturated {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 10.0,
        format!("200 graphs, {mismatches} mismatches, {secs:.2} s"),
    )
}

// ---------------------------------------------------------------------------
// 2. Pricing oracle

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut instances = 0;
    let mut failures = Vec::new();
    let mut negative_total = 0;
    while instances < 50 {
        let domains = random_domains(&mut rng, 4);
        let graph = random_graph(&mut rng, &domains);
        let n = rng.gen_range(5..=40);
        let n_classes = rng.gen_range(2..=3u32);
        let codes: Vec<Vec<u32>> = domains
            .iter()
            .map(|dm| (0..n).map(|_| rng.gen_range(0..dm.cardinality)).collect())
            .collect();
        let labels = Labels::Classes {
            ids: (0..n).map(|_| rng.gen_range(0..n_classes)).collect(),
            n_classes,
        };
        let data = BinnedDataset::new(
            domains.iter().map(|d| d.name.clone()).collect(),
            codes,
            domains.iter().map(|d| d.cardinality).collect(),
            labels,
        )
        .unwrap();
        let d = rng.gen_range(1..=domains.len());
        let rules = omt_core::RuleConfig {
            max_length: d,
            min_support: rng.gen_range(1..=3),
            condition_cost: if rng.gen_bool(0.5) { 0.0 } else { 0.05 },
            ..omt_core::RuleConfig::new(omt_core::MetricKind::Misclassification)
        };
        let paths = brute_force_paths(&graph, &data, d, rules.min_support);
        if paths.len() > 500 {
            continue;
        }
        instances += 1;
        let duals = DualVector {
            lambda: (0..n).map(|_| rng.gen_range(-0.5..2.0)).collect(),
            mu: rng.gen_range(-1.0..0.5),
            tau: Vec::new(),
        };
        let tolerance = 1e-6;
        let mut expected: Vec<(Vec<usize>, f64)> = paths
            .iter()
            .map(|p| {
                (
                    p.nodes.clone(),
                    path_reduced_cost(&data, p, rules.condition_cost, &duals),
                )
            })
            .filter(|(_, rc)| *rc < -tolerance)
            .collect();
        expected.sort_by(|a, b| a.0.cmp(&b.0));
        negative_total += expected.len();

        let k = rng.gen_range(500..=1000);
        let mut found: Vec<(Vec<usize>, f64)> = ksp(&graph, &data, &duals, &[], &rules, k, tolerance)
            .into_iter()
            .map(|p| (p.rule.nodes().to_vec(), p.reduced_cost))
            .collect();
        found.sort_by(|a, b| a.0.cmp(&b.0));

        let same_set = expected.len() == found.len() && expected.iter().zip(&found).all(|(a, b)| a.0 == b.0);
        let rc_ok = same_set && expected.iter().zip(&found).all(|(a, b)| (a.1 - b.1).abs() <= 1e-9);
        if !(same_set && rc_ok) {
            failures.push(format!(
                "instance {instances}: expected {} paths, got {}",
                expected.len(),
                found.len()
            ));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "50 instances, {negative_total} negative paths in total; {}",
            if failures.is_empty() {
                "all sets and reduced costs match".to_string()
            } else {
                failures.join("; ")
            }
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. LP core against vertex enumeration

struct DenseLp {
    c: Vec<f64>,
    rows: Vec<Vec<f64>>,
    senses: Vec<RowSense>,
    rhs: Vec<f64>,
    bounds: Vec<(f64, f64)>,
}

fn random_lp(rng: &mut ChaCha8Rng) -> DenseLp {
    let n = rng.gen_range(1..=10);
    let m = rng.gen_range(1..=8);
    let c = (0..n).map(|_| rng.gen_range(-5..=5) as f64).collect();
    let bounds: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let lo = if rng.gen_bool(0.8) { 0.0 } else { -2.0 };
            let hi = if rng.gen_bool(0.7) {
                f64::INFINITY
            } else {
                rng.gen_range(1..=4) as f64
            };
            (lo, hi)
        })
        .collect();
    let mut rows = Vec::new();
    let mut senses = Vec::new();
    let mut rhs = Vec::new();
    // The first row keeps the feasible region bounded.
    rows.push(vec![1.0; n]);
    senses.push(RowSense::Le);
    rhs.push(10.0);
    for _ in 1..m {
        rows.push(
            (0..n)
                .map(|_| {
                    if rng.gen_bool(0.7) {
                        rng.gen_range(-3..=3) as f64
                    } else {
                        0.0
                    }
                })
                .collect(),
        );
        senses.push(match rng.gen_range(0..10) {
            0..=3 => RowSense::Le,
            4..=7 => RowSense::Ge,
            _ => RowSense::Eq,
        });
        rhs.push(rng.gen_range(-4..=8) as f64);
    }
    DenseLp {
        c,
        rows,
        senses,
        rhs,
        bounds,
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting; `None` when singular.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn lp_feasible(lp: &DenseLp, x: &[f64], tol: f64) -> bool {
    let rows_ok = lp.rows.iter().zip(&lp.senses).zip(&lp.rhs).all(|((row, s), &b)| {
        let act: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
        match s {
            RowSense::Le => act <= b + tol,
            RowSense::Ge => act >= b - tol,
            RowSense::Eq => (act - b).abs() <= tol,
        }
    });
    rows_ok
        && x.iter()
            .zip(&lp.bounds)
            .all(|(&v, &(lo, hi))| v >= lo - tol && v <= hi + tol)
}

/// Minimum objective over all vertices, or `None` if no vertex is feasible.
/// Returns `Err` when the instance is too large to enumerate.
fn vertex_oracle(lp: &DenseLp) -> Result<Option<f64>, ()> {
    let n = lp.c.len();
    // Constraint hyperplanes: rows, then finite bounds.
    let mut planes: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    for ((row, s), &b) in lp.rows.iter().zip(&lp.senses).zip(&lp.rhs) {
        planes.push((row.clone(), b, *s == RowSense::Eq));
    }
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        for v in [lo, hi] {
            if v.is_finite() {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                planes.push((e, v, false));
            }
        }
    }
    let forced: Vec<usize> = (0..planes.len()).filter(|&i| planes[i].2).collect();
    let free: Vec<usize> = (0..planes.len()).filter(|&i| !planes[i].2).collect();
    if forced.len() > n {
        return Err(());
    }
    let pick = n - forced.len();
    if pick > free.len() || binomial(free.len(), pick) > 400_000 {
        return Err(());
    }
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..pick).collect();
    loop {
        let chosen: Vec<usize> = forced.iter().copied().chain(idx.iter().map(|&i| free[i])).collect();
        let a: Vec<Vec<f64>> = chosen.iter().map(|&i| planes[i].0.clone()).collect();
        let b: Vec<f64> = chosen.iter().map(|&i| planes[i].1).collect();
        if let Some(x) = solve_square(a, b) {
            if lp_feasible(lp, &x, 1e-9) {
                let obj: f64 = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        // Advance to the next combination in lexicographic order.
        let mut i = pick;
        while i > 0 && idx[i - 1] == free.len() - pick + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return Ok(best);
        }
        idx[i - 1] += 1;
        for j in i..pick {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Dual objective `b'y + sum_j min over [l_j, u_j] of d_j x_j`, or `None`
/// if the multipliers are not dual feasible.
fn dual_bound(lp: &DenseLp, y: &[f64]) -> Option<f64> {
    let tol = 1e-9;
    for (s, &v) in lp.senses.iter().zip(y) {
        let ok = match s {
            RowSense::Le => v <= tol,
            RowSense::Ge => v >= -tol,
            RowSense::Eq => true,
        };
        if !ok {
            return None;
        }
    }
    let mut total: f64 = lp.rhs.iter().zip(y).map(|(b, v)| b * v).sum();
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        let d = lp.c[j] - lp.rows.iter().zip(y).map(|(row, v)| row[j] * v).sum::<f64>();
        if d > tol {
            total += d * lo;
        } else if d < -tol {
            if !hi.is_finite() {
                return None;
            }
            total += d * hi;
        }
    }
    Some(total)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut done = 0;
    let mut infeasible = 0;
    let mut worst_obj: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut failures = Vec::new();
    while done < 50 {
        let dense = random_lp(&mut rng);
        let Ok(expected) = vertex_oracle(&dense) else {
            continue;
        };
        done += 1;
        let lp = LinearProgram::from_dense(&dense.c, &dense.rows, &dense.senses, &dense.rhs, &dense.bounds);
        let sol = solve_lp(&lp, &SimplexOptions::default()).unwrap();
        match expected {
            None => {
                infeasible += 1;
                if sol.status != LpStatus::Infeasible {
                    failures.push(format!("instance {done}: oracle infeasible, solver {:?}", sol.status));
                }
            }
            Some(obj) => {
                if sol.status != LpStatus::Optimal {
                    failures.push(format!("instance {done}: oracle {obj}, solver {:?}", sol.status));
                    continue;
                }
                let primal: f64 = dense.c.iter().zip(&sol.primal).map(|(c, v)| c * v).sum();
                let err = (primal - obj).abs();
                worst_obj = worst_obj.max(err);
                if err > 1e-7 || !lp_feasible(&dense, &sol.primal, 1e-7) {
                    failures.push(format!("instance {done}: objective {primal} vs vertex {obj}"));
                }
                match dual_bound(&dense, &sol.duals) {
                    Some(dual) => {
                        let gap = (primal - dual).abs();
                        worst_gap = worst_gap.max(gap);
                        if gap > 1e-7 {
                            failures.push(format!("instance {done}: duality gap {gap:.3e}"));
                        }
                    }
                    None => failures.push(format!("instance {done}: duals not dual feasible")),
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "50 LPs ({infeasible} infeasible), max objective error {worst_obj:.1e}, max duality gap {worst_gap:.1e}{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    )
}

// ---------------------------------------------------------------------------
// 4 and 5. Full enumeration against column generation

struct EnumerationResult {
    name: &'static str,
    converged: bool,
    cg_objective: f64,
    full_objective: f64,
    min_rc: f64,
    pool_agrees: bool,
    paths: usize,
}

fn enumeration_check(name: &'static str, raw: &RawDataset, partitions: &mut PartitionLog) -> EnumerationResult {
    let config = TrainConfig {
        depth: 2,
        ..TrainConfig::default()
    };
    assert_eq!(config.cg.k, 1000);
    let problem = build_problem(raw, &config).unwrap();
    let (graph, data, rules) = (&problem.graph, &problem.data, &problem.rules);
    let condition_cost = config.condition_cost();

    let brute = brute_force_paths(graph, data, rules.max_length, rules.min_support);
    let pool = enumerate_paths(graph, data, rules, 10_000).unwrap();
    let mut a: Vec<&[usize]> = brute.iter().map(|p| p.nodes.as_slice()).collect();
    let mut b: Vec<&[usize]> = pool.iter().map(|r| r.nodes()).collect();
    a.sort_unstable();
    b.sort_unstable();
    let costs_agree = brute.iter().all(|p| {
        pool.iter()
            .find(|r| r.nodes() == p.nodes.as_slice())
            .is_some_and(|r| (r.cost() - path_cost(data, p, condition_cost)).abs() <= 1e-9)
    });
    let pool_agrees = a == b && costs_agree;

    let outcome = run_cg(graph, data, rules, &config.cg, problem.master.clone()).unwrap();
    partitions.record(
        format!("{name} column generation"),
        partition_holds(graph, data, &outcome.master.pool, &outcome.mip),
    );
    let full = MasterProblem {
        pool,
        ..problem.master.clone()
    };
    let exact = solve_master_mip(&full, &MipOptions::default()).unwrap();
    partitions.record(
        format!("{name} full enumeration"),
        partition_holds(graph, data, &full.pool, &exact),
    );

    let lp = outcome.master.build_rmp();
    let sol = solve_lp(&lp, &SimplexOptions::default()).unwrap();
    let duals = DualVector::from_row_duals(data.n_samples(), &sol.duals);
    let min_rc = brute
        .iter()
        .map(|p| path_reduced_cost(data, p, condition_cost, &duals))
        .fold(f64::INFINITY, f64::min);

    EnumerationResult {
        name,
        converged: outcome.report.converged_by == ConvergedBy::DualFeasible,
        cg_objective: outcome.report.nu_ip,
        full_objective: exact.objective,
        min_rc,
        pool_agrees,
        paths: brute.len(),
    }
}

fn criteria_4_and_5(partitions: &mut PartitionLog) -> (Outcome, Outcome) {
    let monks = load("monks-1");
    let ttt = load("tic-tac-toe");
    let mut rows: Vec<usize> = (0..ttt.n_samples).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    rows.truncate(200);
    rows.sort_unstable();
    let results = [
        enumeration_check("monks-1", &monks, partitions),
        enumeration_check("tic-tac-toe[200]", &ttt.subset(&rows), partitions),
    ];

    let mut pass4 = true;
    let mut pass5 = true;
    let mut d4 = Vec::new();
    let mut d5 = Vec::new();
    for r in &results {
        let ok4 =
            r.converged && r.pool_agrees && r.paths <= 10_000 && (r.cg_objective - r.full_objective).abs() <= 1e-6;
        let ok5 = r.converged && r.min_rc >= -1e-6 - 1e-9;
        pass4 &= ok4;
        pass5 &= ok5;
        d4.push(format!(
            "{}: {} paths, cg {:.6} full {:.6}{}{}",
            r.name,
            r.paths,
            r.cg_objective,
            r.full_objective,
            if r.converged { "" } else { ", CG not dual feasible" },
            if r.pool_agrees {
                ""
            } else {
                ", enumeration disagrees with brute force"
            }
        ));
        d5.push(format!("{}: min reduced cost {:.3e}", r.name, r.min_rc));
    }
    (outcome(pass4, d4.join("; ")), outcome(pass5, d5.join("; ")))
}

// ---------------------------------------------------------------------------
// 6. MIP-LP gap

const SUITE: [&str; 9] = [
    "balance-scale",
    "breast-cancer",
    "car-evaluation",
    "hayes-roth",
    "house-votes-84",
    "monks-1",
    "monks-2",
    "monks-3",
    "tic-tac-toe",
];

/// Trains on the 50 % training split and records the partition check.
fn train_on_split(
    raw: &RawDataset,
    config: &TrainConfig,
    seed: u64,
    name: &str,
    partitions: &mut PartitionLog,
) -> omt_core::TrainedModel {
    let split = split_indices(raw.n_samples, &SplitFractions::default(), seed);
    let train_raw = raw.subset(&split.train);
    let model = omt_core::train(&train_raw, config).unwrap();
    let (data, _) = model.encoder.encode(&train_raw).unwrap();
    partitions.record(name, tree_partition_holds(&model.tree, &data, &model.mip));
    model
}

fn criterion_6(partitions: &mut PartitionLog) -> Outcome {
    let mut gaps = Vec::new();
    let mut lines = Vec::new();
    for name in SUITE {
        let raw = load(name);
        assert!(raw.n_samples <= 1728);
        for depth in [2, 3] {
            let config = TrainConfig {
                depth,
                ..TrainConfig::default()
            };
            let start = Instant::now();
            let model = train_on_split(&raw, &config, 0, &format!("{name} d={depth}"), partitions);
            gaps.push(model.report.gap);
            lines.push(format!(
                "{name} d={depth} gap {:.4} ({:.1} s)",
                model.report.gap,
                start.elapsed().as_secs_f64()
            ));
        }
    }
    gaps.sort_by(f64::total_cmp);
    let median = (gaps[(gaps.len() - 1) / 2] + gaps[gaps.len() / 2]) / 2.0;
    outcome(
        median <= 0.05,
        format!(
            "median gap {:.4} over {} runs [{}]",
            median,
            gaps.len(),
            lines.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Accuracy reproduction

fn criterion_7(partitions: &mut PartitionLog) -> Outcome {
    let targets: [(&str, f64); 3] = [("monks-1", 1.0), ("car-evaluation", 0.83), ("tic-tac-toe", 0.75)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, target) in targets {
        let raw = load(name);
        let config = TrainConfig {
            depth: 4,
            leaves: Some(16),
            ..TrainConfig::default()
        };
        let mut accs = Vec::new();
        let mut slowest: f64 = 0.0;
        for seed in 0..5 {
            let start = Instant::now();
            let split = split_indices(raw.n_samples, &SplitFractions::default(), seed);
            let (_, model) = tune_bins(&raw, &split, &config).unwrap();
            slowest = slowest.max(start.elapsed().as_secs_f64());

            let mut fit_rows = split.train.clone();
            fit_rows.extend(&split.validation);
            fit_rows.sort_unstable();
            let (fit_data, _) = model.encoder.encode(&raw.subset(&fit_rows)).unwrap();
            partitions.record(
                format!("{name} seed {seed}"),
                tree_partition_holds(&model.tree, &fit_data, &model.mip),
            );
            let (test, _) = model.encoder.encode(&raw.subset(&split.test)).unwrap();
            accs.push(evaluate(&model.tree, &test).accuracy.unwrap());
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let sd = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64).sqrt();
        let ok = mean >= target - 1e-12 && slowest <= 600.0;
        pass &= ok;
        parts.push(format!(
            "{name} {mean:.3}±{sd:.3} (need {}{target}) [{}], slowest seed {slowest:.0} s",
            if target == 1.0 { "" } else { ">= " },
            accs.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ")
        ));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 8. Constraint enforcement

fn covers_of(graph: &FeatureGraph, data: &BinnedDataset, pool: &[omt_core::Rule], selected: &[usize]) -> Vec<Path> {
    selected
        .iter()
        .map(|&j| {
            let nodes = pool[j].nodes().to_vec();
            let cover = (0..data.n_samples())
                .filter(|&i| {
                    nodes.iter().all(|&v| {
                        let n = graph.node(v);
                        let code = data.code(n.feature.unwrap(), i);
                        n.first <= code && code <= n.last
                    })
                })
                .collect();
            Path { nodes, cover }
        })
        .collect()
}

fn constrained_run(
    name: &str,
    depth: usize,
    constraints: ConstraintsConfig,
    partitions: &mut PartitionLog,
) -> (omt_core::Problem, omt_core::CgOutcome, Vec<Path>) {
    let raw = load(name);
    let split = split_indices(raw.n_samples, &SplitFractions::default(), 0);
    let config = TrainConfig {
        depth,
        constraints,
        ..TrainConfig::default()
    };
    let problem = build_problem(&raw.subset(&split.train), &config).unwrap();
    let out = run_cg(
        &problem.graph,
        &problem.data,
        &problem.rules,
        &config.cg,
        problem.master.clone(),
    )
    .unwrap();
    partitions.record(
        format!("{name} constrained"),
        partition_holds(&problem.graph, &problem.data, &out.master.pool, &out.mip),
    );
    let selected = covers_of(&problem.graph, &problem.data, &out.master.pool, &out.mip.selected);
    (problem, out, selected)
}

fn feature_name(graph: &FeatureGraph, node: usize) -> &str {
    &graph.feature_names()[graph.node(node).feature.unwrap()]
}

fn criterion_8(partitions: &mut PartitionLog) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;

    // (a) minimum F1 on tic-tac-toe with the minority class as positive.
    let delta = 0.7;
    let (problem, _, selected) = constrained_run(
        "tic-tac-toe",
        2,
        ConstraintsConfig {
            min_f1: Some(delta),
            positive_class: Some("n".into()),
            ..ConstraintsConfig::default()
        },
        partitions,
    );
    let positive = problem.encoder.class_names().iter().position(|c| c == "n").unwrap() as u32;
    let (ids, _) = class_ids(&problem.data);
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let mut activity = 0.0;
    for p in &selected {
        let (pred, _) = majority(&problem.data, &p.cover);
        let pos = p.cover.iter().filter(|&&i| ids[i] == positive).count();
        let (t, f, m) = if pred == positive {
            (pos, p.cover.len() - pos, 0)
        } else {
            (0, 0, pos)
        };
        tp += t;
        fp += f;
        fn_ += m;
        activity += t as f64 - delta * (t as f64 + 0.5 * (f + m) as f64);
    }
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    let ok = activity >= -1e-9 && f1 >= delta - 1e-9 && !selected.is_empty();
    pass &= ok;
    parts.push(format!("(a) F1 row activity {activity:.3}, covered F1 {f1:.3}"));

    // (b) per-path test-cost budget on breast-cancer.
    let costs = [
        ("age", 2.0),
        ("tumor-size", 2.0),
        ("inv-nodes", 1.0),
        ("deg-malig", 1.0),
        ("node-caps", 1.5),
    ];
    let budget = 2.5;
    let (problem, _, selected) = constrained_run(
        "breast-cancer",
        3,
        ConstraintsConfig {
            path_budget: Some(PathBudgetConfig {
                max_cost: Some(budget),
                node_costs: costs.iter().map(|&(n, c)| (n.to_string(), c)).collect(),
            }),
            ..ConstraintsConfig::default()
        },
        partitions,
    );
    let worst = selected
        .iter()
        .map(|p| {
            p.nodes
                .iter()
                .map(|&v| {
                    let f = feature_name(&problem.graph, v);
                    costs.iter().find(|c| c.0 == f).map_or(0.0, |c| c.1)
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let ok = worst <= budget + 1e-9;
    pass &= ok;
    parts.push(format!("(b) max path cost {worst} <= {budget}"));

    // (c) forbidden pair of the two most informative votes.
    let pair = ("physician-fee-freeze", "el-salvador-aid");
    let (problem, _, selected) = constrained_run(
        "house-votes-84",
        2,
        ConstraintsConfig {
            forbidden_pairs: vec![(pair.0.into(), pair.1.into())],
            ..ConstraintsConfig::default()
        },
        partitions,
    );
    let both = selected
        .iter()
        .filter(|p| {
            let names: Vec<&str> = p.nodes.iter().map(|&v| feature_name(&problem.graph, v)).collect();
            names.contains(&pair.0) && names.contains(&pair.1)
        })
        .count();
    pass &= both == 0;
    parts.push(format!(
        "(c) {both} of {} rules use both {} and {}",
        selected.len(),
        pair.0,
        pair.1
    ));

    // (d) per-path fairness across the `breast` groups.
    let delta = 0.2;
    let (problem, _, selected) = constrained_run(
        "breast-cancer",
        2,
        ConstraintsConfig {
            positive_class: Some("recurrence-events".into()),
            fairness: Some(FairnessConfig {
                group_feature: "breast".into(),
                per_path_delta: Some(delta),
                budget_delta: None,
            }),
            ..ConstraintsConfig::default()
        },
        partitions,
    );
    let data = &problem.data;
    let positive = problem
        .encoder
        .class_names()
        .iter()
        .position(|c| c == "recurrence-events")
        .unwrap() as u32;
    let group = data.feature_names().iter().position(|n| n == "breast").unwrap();
    let n_groups = data.cardinalities()[group] as usize;
    let (ids, _) = class_ids(data);
    let worst = selected
        .iter()
        .map(|p| {
            let rates: Vec<f64> = (0..n_groups as u32)
                .map(|g| {
                    let members: Vec<usize> = p.cover.iter().copied().filter(|&i| data.code(group, i) == g).collect();
                    if members.is_empty() {
                        0.0
                    } else {
                        members.iter().filter(|&&i| ids[i] == positive).count() as f64 / members.len() as f64
                    }
                })
                .collect();
            rates.iter().copied().fold(f64::MIN, f64::max) - rates.iter().copied().fold(f64::MAX, f64::min)
        })
        .fold(0.0, f64::max);
    let ok = worst <= delta + 1e-9 && !selected.is_empty();
    pass &= ok;
    parts.push(format!(
        "(d) max group disparity {worst:.3} <= {delta} over {} rules",
        selected.len()
    ));

    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 10. Determinism

fn criterion_10(partitions: &mut PartitionLog) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, depth) in [("house-votes-84", 3), ("tic-tac-toe", 3)] {
        let raw = load(name);
        let config = TrainConfig {
            depth,
            ..TrainConfig::default()
        };
        let a = train_on_split(&raw, &config, 1, &format!("{name} determinism a"), partitions);
        let b = train_on_split(&raw, &config, 1, &format!("{name} determinism b"), partitions);
        let same = a.tree.to_json().as_bytes() == b.tree.to_json().as_bytes();
        pass &= same;
        parts.push(format!(
            "{name} d={depth}: {}",
            if same { "identical" } else { "different" }
        ));
    }
    let raw = load("monks-1");
    let split = split_indices(raw.n_samples, &SplitFractions::default(), 3);
    let config = TrainConfig {
        depth: 4,
        leaves: Some(16),
        ..TrainConfig::default()
    };
    let a = tune_bins(&raw, &split, &config).unwrap().1.tree.to_json();
    let b = tune_bins(&raw, &split, &config).unwrap().1.tree.to_json();
    pass &= a == b;
    parts.push(format!(
        "monks-1 tuned: {}",
        if a == b { "identical" } else { "different" }
    ));
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    // Numeric arguments pick criteria (`-- 1 3`); anything else, such as
    // flags cargo forwards, is ignored. No selection runs everything.
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: usize| picked.is_empty() || picked.contains(&id) || (id == 4 && picked.contains(&5));
    let mut partitions = PartitionLog::default();
    let mut results: Vec<(usize, Outcome, f64)> = Vec::new();
    let mut run = |id: usize, f: &mut dyn FnMut(&mut PartitionLog) -> Outcome| {
        if !wanted(id) {
            return;
        }
        let start = Instant::now();
        let o = f(&mut partitions);
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} criterion {id} ({secs:.1} s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, o, secs));
    };
    run(1, &mut |_| criterion_1());
    run(2, &mut |_| criterion_2());
    run(3, &mut |_| criterion_3());
    let mut fifth = None;
    run(4, &mut |p| {
        let (four, five) = criteria_4_and_5(p);
        fifth = Some(five);
        four
    });
    if let Some(five) = fifth.filter(|_| wanted(5)) {
        run(5, &mut |_| outcome(five.pass, five.detail.clone()));
    }
    run(6, &mut criterion_6);
    run(7, &mut criterion_7);
    run(8, &mut criterion_8);
    run(10, &mut criterion_10);
    let part = outcome(
        partitions.failures.is_empty(),
        format!(
            "{} integer solutions checked{}",
            partitions.checked,
            if partitions.failures.is_empty() {
                String::new()
            } else {
                format!(", violations in: {}", partitions.failures.join(", "))
            }
        ),
    );
    println!(
        "{} criterion 9: {}",
        if part.pass { "PASS" } else { "FAIL" },
        part.detail
    );
    results.push((9, part, 0.0));

    results.sort_by_key(|r| r.0);
    let failed: Vec<String> = results.iter().filter(|r| !r.1.pass).map(|r| r.0.to_string()).collect();
    println!();
    println!("acceptance summary:");
    for (id, o, _) in &results {
        println!("  {} criterion {id}", if o.pass { "PASS" } else { "FAIL" });
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
