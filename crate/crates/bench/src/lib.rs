//! Fixtures shared by the benchmarks: master problems built from the
//! bundled datasets, plus a pricing round to seed the restricted master.

use std::path::PathBuf;

use omt_core::{build_problem, ksp, load_csv, split_indices, DualVector, Problem, SplitFractions, TrainConfig};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(format!("{name}.csv"))
}

/// The training split (seed 0) of a bundled dataset, set up for a tree of `depth`.
pub fn problem(name: &str, depth: usize) -> Problem {
    let raw = load_csv(&data_path(name), "class", &Default::default()).expect("bundled dataset loads");
    let split = split_indices(raw.n_samples, &SplitFractions::default(), 0);
    let raw = raw.subset(&split.train);
    build_problem(
        &raw,
        &TrainConfig {
            depth,
            ..TrainConfig::default()
        },
    )
    .expect("problem builds")
}

/// Adds up to `k` priced rules to the pool, using the duals of the
/// all-slack master.
pub fn seed_pool(problem: &mut Problem, k: usize) {
    let lambda = DualVector::slack_basis(&problem.master);
    let priced = ksp(&problem.graph, &problem.data, &lambda, &[], &problem.rules, k, 1e-6);
    problem.master.pool.extend(priced.into_iter().map(|p| p.rule));
}
