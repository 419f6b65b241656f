//! Optimal multiway-split decision trees learned by column generation.
//!
//! Training data is encoded into per-feature codes ([`dataset`]), laid out
//! as a layered graph whose source-to-sink paths are candidate rules
//! ([`feature_graph`], [`rules`]). A set-partitioning master problem
//! ([`master`]) picks at most `l` disjoint rules; its LP relaxation is
//! grown by pricing paths with negative reduced cost ([`colgen`]) and the
//! integer problem is finished by branch and bound over the generated
//! columns. The selected rules become a [`tree::MultiwayTree`].
//!
//! ```
//! use omt_core::{parse_csv, train, TrainConfig};
//!
//! let mut csv = String::from("outlook,windy,play\n");
//! for (o, w, p) in [("sunny", "no", "yes"), ("rain", "yes", "no"), ("sunny", "yes", "yes"), ("rain", "no", "yes")] {
//!     csv.push_str(&format!("{o},{w},{p}\n"));
//! }
//! let raw = parse_csv(&csv, "play", &Default::default()).unwrap();
//! let model = train(&raw, &TrainConfig { depth: 2, ..TrainConfig::default() }).unwrap();
//! assert_eq!(model.train.accuracy, Some(1.0));
//! ```

pub mod colgen;
pub mod dataset;
pub mod error;
pub mod feature_graph;
pub mod master;
pub mod pipeline;
pub mod rules;
pub mod simplex;
pub mod tree;

pub use colgen::{ksp, run_cg, CgConfig, CgOutcome, CgReport, ConvergedBy, IterationLog, PricedRule};
pub use dataset::{
    load_csv, parse_csv, BinKind, BinSpec, BinnedDataset, BinningConfig, ColumnKind, Encoder, Labels, RawDataset,
    SchemaHints, TaskKind,
};
pub use error::{OmtError, Result};
pub use feature_graph::{enumerate_paths, AttributeConstraints, FeatureDomain, FeatureGraph, PathCount};
pub use master::{
    default_penalties, reduced_cost, solve_master_mip, DualVector, MasterProblem, MipOptions, MipSolution, MipStatus,
    SideConstraint,
};
pub use pipeline::{
    build_problem, split_indices, train, tune_bins, ConstraintsConfig, OrderMode, Problem, Split, SplitFractions,
    TrainConfig, TrainedModel,
};
pub use rules::{MetricKind, Prediction, Rule, RuleConfig};
pub use simplex::{solve_lp, LinearProgram, LpSolution, LpStatus, RowSense, SimplexOptions};
pub use tree::{assemble_tree, evaluate, greedy_baseline, EvalReport, MultiwayTree};
