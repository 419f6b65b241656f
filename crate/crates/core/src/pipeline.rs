//! End-to-end training: splits, constraint configuration, encoding, graph
//! construction, column generation and tree assembly.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colgen::{min_support_count, run_cg, CgConfig, CgReport};
use crate::dataset::{BinnedDataset, BinningConfig, Encoder, RawDataset, TaskKind};
use crate::error::{OmtError, Result};
use crate::feature_graph::{AttributeConstraints, FeatureDomain, FeatureGraph};
use crate::master::{default_penalties, MasterProblem, MipSolution, SideConstraint};
use crate::rules::{MetricKind, RuleConfig};
use crate::tree::{assemble_tree, evaluate, EvalReport, MultiwayTree};

/// Fractions of the data in the train, validation and test splits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.5,
            validation: 0.25,
            test: 0.25,
        }
    }
}

impl SplitFractions {
    /// Parses `"50,25,25"` (percentages or fractions; normalized).
    pub fn parse(text: &str) -> Result<SplitFractions> {
        let parts: Vec<f64> = text
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| OmtError::config(format!("bad split '{text}'")))?;
        let [a, b, c] = parts[..] else {
            return Err(OmtError::config(format!("split '{text}' needs three parts")));
        };
        let total = a + b + c;
        if parts.iter().any(|&p| p.is_nan() || p < 0.0) || total.is_nan() || total <= 0.0 || a == 0.0 {
            return Err(OmtError::config(format!("bad split '{text}'")));
        }
        Ok(SplitFractions {
            train: a / total,
            validation: b / total,
            test: c / total,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.train + self.validation + self.test;
        if (sum - 1.0).abs() > 1e-9 || self.train <= 0.0 || self.validation < 0.0 || self.test < 0.0 {
            return Err(OmtError::config("split fractions must be non-negative and sum to 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle cut into three parts; each part is returned sorted.
pub fn split_indices(n: usize, fractions: &SplitFractions, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fractions.train * n as f64).round() as usize).min(n);
    let n_val = ((fractions.validation * n as f64).round() as usize).min(n - n_train);
    let part = |range: std::ops::Range<usize>| {
        let mut v = idx[range].to_vec();
        v.sort_unstable();
        v
    };
    Split {
        train: part(0..n_train),
        validation: part(n_train..n_train + n_val),
        test: part(n_train + n_val..n),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessConfig {
    pub group_feature: String,
    #[serde(default)]
    pub per_path_delta: Option<f64>,
    #[serde(default)]
    pub budget_delta: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathBudgetConfig {
    #[serde(default)]
    pub max_cost: Option<f64>,
    /// Test cost per node selector (`feature` or `feature=value`).
    #[serde(default)]
    pub node_costs: BTreeMap<String, f64>,
}

/// The JSON constraints document. Every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsConfig {
    #[serde(default)]
    pub min_f1: Option<f64>,
    /// Class name of the positive class.
    #[serde(default)]
    pub positive_class: Option<String>,
    #[serde(default)]
    pub fairness: Option<FairnessConfig>,
    #[serde(default)]
    pub path_budget: Option<PathBudgetConfig>,
    /// Pairs of node selectors that may not appear on one path.
    #[serde(default)]
    pub forbidden_pairs: Vec<(String, String)>,
}

impl ConstraintsConfig {
    pub fn from_json(text: &str) -> Result<ConstraintsConfig> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn attribute_constraints(&self) -> AttributeConstraints {
        let budget = self.path_budget.clone().unwrap_or_default();
        AttributeConstraints {
            forbidden_pairs: self.forbidden_pairs.clone(),
            node_costs: budget.node_costs,
            max_path_cost: budget.max_cost,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderMode {
    /// Column order of the input file.
    #[default]
    Natural,
    /// Descending single-feature information gain on the training data.
    Gain,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub depth: usize,
    /// Leaf budget; `None` means `2^depth`.
    pub leaves: Option<usize>,
    pub binning: BinningConfig,
    pub metric: MetricKind,
    /// Minimum support as a fraction of the training samples.
    pub min_support: f64,
    pub order: OrderMode,
    /// Overall wall-clock budget shared by column generation and the MIP.
    pub time_limit: Option<Duration>,
    pub constraints: ConstraintsConfig,
    /// Objective cost per rule condition. `None` picks a tie-breaking
    /// value for misclassification (see [`TrainConfig::condition_cost`])
    /// and zero for regression.
    pub condition_cost: Option<f64>,
    pub cg: CgConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            depth: 3,
            leaves: None,
            binning: BinningConfig::default(),
            metric: MetricKind::Misclassification,
            min_support: 0.01,
            order: OrderMode::Natural,
            time_limit: None,
            constraints: ConstraintsConfig::default(),
            condition_cost: None,
            cg: CgConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn leaf_budget(&self) -> usize {
        self.leaves
            .unwrap_or_else(|| 1usize.checked_shl(self.depth.min(30) as u32).unwrap_or(usize::MAX))
    }

    /// The per-condition objective cost in effect. The automatic value for
    /// misclassification is `1 / (l * d + 1)`: a whole tree's condition
    /// costs stay below one misclassified sample, so among trees with the
    /// fewest errors the one with the fewest conditions wins.
    pub fn condition_cost(&self) -> f64 {
        match self.condition_cost {
            Some(c) => c,
            None if self.metric == MetricKind::Misclassification => {
                let conditions = self.leaf_budget().saturating_mul(self.depth).saturating_add(1);
                1.0 / conditions as f64
            }
            None => 0.0,
        }
    }

    pub fn task(&self) -> TaskKind {
        if self.metric.is_regression() {
            TaskKind::Regression
        } else {
            TaskKind::Classification
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(OmtError::config("depth must be at least 1"));
        }
        if self.leaf_budget() == 0 {
            return Err(OmtError::config("leaf budget must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.min_support) {
            return Err(OmtError::config("minimum support must be a fraction in [0, 1]"));
        }
        if !self.condition_cost().is_finite() || self.condition_cost() < 0.0 {
            return Err(OmtError::config("condition cost must be a non-negative number"));
        }
        if self.binning.n_bins < 2 {
            return Err(OmtError::config("at least 2 bins are needed"));
        }
        self.cg.validate()
    }
}

/// A fitted model plus everything the training run reports.
pub struct TrainedModel {
    pub tree: MultiwayTree,
    pub encoder: Encoder,
    pub report: CgReport,
    pub mip: MipSolution,
    pub train: EvalReport,
    pub graph_nodes: usize,
}

/// Encodes `raw` with `encoder` and marks the fairness group feature.
pub fn encode_with_groups(
    encoder: &Encoder,
    raw: &RawDataset,
    constraints: &ConstraintsConfig,
) -> Result<BinnedDataset> {
    let (data, warnings) = encoder.encode(raw)?;
    if warnings.unseen > 0 || warnings.clamped > 0 {
        log::warn!(
            "{} unseen categorical values and {} out-of-range numbers while encoding",
            warnings.unseen,
            warnings.clamped
        );
    }
    match &constraints.fairness {
        Some(fair) => {
            let f = data
                .feature_names()
                .iter()
                .position(|n| *n == fair.group_feature)
                .ok_or_else(|| OmtError::config(format!("unknown group feature '{}'", fair.group_feature)))?;
            data.with_group_feature(f)
        }
        None => Ok(data),
    }
}

fn positive_class_id(encoder: &Encoder, constraints: &ConstraintsConfig) -> Result<Option<u32>> {
    let needs = constraints.min_f1.is_some() || constraints.fairness.is_some();
    match (&constraints.positive_class, needs) {
        (Some(name), _) => encoder
            .class_names()
            .iter()
            .position(|c| c == name)
            .map(|p| Some(p as u32))
            .ok_or_else(|| OmtError::config(format!("unknown positive class '{name}'"))),
        (None, true) => Err(OmtError::config("F1 and fairness constraints need \"positive_class\"")),
        (None, false) => Ok(None),
    }
}

/// Fits the encoder on `raw` and trains a tree on all of its rows.
pub fn train(raw: &RawDataset, config: &TrainConfig) -> Result<TrainedModel> {
    let start = Instant::now();
    let problem = build_problem(raw, config)?;
    let mut cg = config.cg.clone();
    if let Some(limit) = config.time_limit {
        cg.time_limit = Some(limit.saturating_sub(start.elapsed()));
    }
    let Problem {
        encoder,
        data,
        graph,
        rules,
        master,
    } = problem;
    let outcome = run_cg(&graph, &data, &rules, &cg, master)?;

    let tree = assemble_tree(&outcome.mip, &outcome.master, &graph, &data, config.depth).with_encoder(encoder.clone());
    let train_report = evaluate(&tree, &data);
    Ok(TrainedModel {
        tree,
        encoder,
        report: outcome.report,
        mip: outcome.mip,
        train: train_report,
        graph_nodes: graph.n_nodes(),
    })
}

/// Everything column generation needs, built from raw training rows.
pub struct Problem {
    pub encoder: Encoder,
    pub data: BinnedDataset,
    pub graph: FeatureGraph,
    pub rules: RuleConfig,
    /// Empty pool with penalties, leaf budget and side rows.
    pub master: MasterProblem,
}

/// Fits the encoder on `raw` and sets up the graph and master problem.
pub fn build_problem(raw: &RawDataset, config: &TrainConfig) -> Result<Problem> {
    config.validate()?;
    let encoder = Encoder::fit(raw, &config.binning, config.task())?;
    let data = encode_with_groups(&encoder, raw, &config.constraints)?;
    let order = match config.order {
        OrderMode::Natural => (0..data.n_features()).collect(),
        OrderMode::Gain => FeatureGraph::gain_order(&data),
    };
    let domains = FeatureDomain::from_encoder(&encoder);
    let graph = FeatureGraph::build(&domains, &order, &config.constraints.attribute_constraints())?;

    let positive = positive_class_id(&encoder, &config.constraints)?;
    let rules = RuleConfig {
        max_length: config.depth,
        min_support: min_support_count(config.min_support, data.n_samples()),
        positive_class: positive,
        fairness_delta: config.constraints.fairness.as_ref().and_then(|f| f.per_path_delta),
        condition_cost: config.condition_cost(),
        ..RuleConfig::new(config.metric)
    };
    let mut side = Vec::new();
    if let (Some(delta), Some(pos)) = (config.constraints.min_f1, positive) {
        side.push(SideConstraint::min_f1(delta, pos)?);
    }
    if let (Some(delta), Some(pos)) = (
        config.constraints.fairness.as_ref().and_then(|f| f.budget_delta),
        positive,
    ) {
        side.push(SideConstraint::fairness_budget(delta, pos)?);
    }
    let master = MasterProblem::new(default_penalties(&data, config.metric), config.leaf_budget(), side);
    Ok(Problem {
        encoder,
        data,
        graph,
        rules,
        master,
    })
}

/// Accuracy (classification) or negated MSE (regression): larger is better.
pub fn score(report: &EvalReport) -> f64 {
    report.accuracy.or(report.mse.map(|m| -m)).unwrap_or(0.0)
}

/// Bin counts tried by [`tune_bins`].
pub const BIN_CANDIDATES: [usize; 4] = [3, 4, 5, 8];

/// Picks κ by validation score (ties go to the smaller κ), then retrains
/// on train and validation rows together.
///
/// A κ whose encoding of the training rows equals that of a smaller κ
/// (columns with few distinct values) would train the same model and is
/// skipped; with a single distinct candidate nothing is trained before
/// the final fit.
pub fn tune_bins(raw: &RawDataset, split: &Split, config: &TrainConfig) -> Result<(usize, TrainedModel)> {
    let train_raw = raw.subset(&split.train);
    let val_raw = raw.subset(&split.validation);
    let mut candidates: Vec<(usize, Encoder)> = Vec::new();
    for &bins in &BIN_CANDIDATES {
        let binning = BinningConfig {
            n_bins: bins,
            ..config.binning
        };
        let encoder = Encoder::fit(&train_raw, &binning, config.task())?;
        if candidates.iter().all(|(_, e)| *e != encoder) {
            candidates.push((bins, encoder));
        }
    }
    let mut best: Option<(f64, usize)> = None;
    if let [(bins, _)] = candidates[..] {
        best = Some((0.0, bins));
    } else {
        for &(bins, _) in &candidates {
            let mut cfg = config.clone();
            cfg.binning.n_bins = bins;
            let model = train(&train_raw, &cfg)?;
            let val = encode_with_groups(&model.encoder, &val_raw, &config.constraints)?;
            let s = score(&evaluate(&model.tree, &val));
            log::info!("bins {bins}: validation score {s:.4}");
            if best.is_none_or(|(b, _)| s > b + 1e-12) {
                best = Some((s, bins));
            }
        }
    }
    let (_, bins) = best.expect("at least one candidate");
    let mut rows = split.train.clone();
    rows.extend(&split.validation);
    rows.sort_unstable();
    let mut cfg = config.clone();
    cfg.binning.n_bins = bins;
    Ok((bins, train(&raw.subset(&rows), &cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_csv;

    #[test]
    fn split_is_a_seeded_partition() {
        let f = SplitFractions::default();
        let a = split_indices(101, &f, 7);
        let b = split_indices(101, &f, 7);
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 51);
        assert_eq!(a.validation.len(), 25);
        assert_eq!(a.test.len(), 25);
        let mut all: Vec<usize> = a.train.iter().chain(&a.validation).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
        assert_ne!(split_indices(101, &f, 8), a);
    }

    #[test]
    fn split_parsing() {
        let s = SplitFractions::parse("50,25,25").unwrap();
        assert!((s.train - 0.5).abs() < 1e-12 && (s.test - 0.25).abs() < 1e-12);
        s.validate().unwrap();
        assert!(SplitFractions::parse("50,50").is_err());
        assert!(SplitFractions::parse("0,50,50").is_err());
        assert!(SplitFractions::parse("a,b,c").is_err());
    }

    #[test]
    fn constraints_document() {
        let text = r#"{"min_f1": 0.8, "positive_class": "yes",
            "fairness": {"group_feature": "sex", "per_path_delta": 0.3, "budget_delta": 1.5},
            "path_budget": {"max_cost": 5.0, "node_costs": {"a": 2.0}},
            "forbidden_pairs": [["a=1", "b=2"]]}"#;
        let c = ConstraintsConfig::from_json(text).unwrap();
        assert_eq!(c.min_f1, Some(0.8));
        assert_eq!(c.fairness.as_ref().unwrap().per_path_delta, Some(0.3));
        let attr = c.attribute_constraints();
        assert_eq!(attr.max_path_cost, Some(5.0));
        assert_eq!(attr.forbidden_pairs, vec![("a=1".to_string(), "b=2".to_string())]);
        assert_eq!(
            ConstraintsConfig::from_json("{}").unwrap(),
            ConstraintsConfig::default()
        );
        assert!(ConstraintsConfig::from_json(r#"{"min_f2": 1}"#).is_err());
    }

    fn toy_csv() -> String {
        let mut s = String::from("color,size,label\n");
        for i in 0..40 {
            let color = ["red", "green", "blue"][i % 3];
            let size = (i % 7) as f64 + 0.5;
            let label = if color == "red" || size > 5.0 { "yes" } else { "no" };
            s.push_str(&format!("{color},{size},{label}\n"));
        }
        s
    }

    #[test]
    fn trains_end_to_end() {
        let raw = parse_csv(&toy_csv(), "label", &Default::default()).unwrap();
        let cfg = TrainConfig {
            depth: 2,
            ..TrainConfig::default()
        };
        let model = train(&raw, &cfg).unwrap();
        assert_eq!(model.train.accuracy, Some(1.0));
        assert!(model.tree.rules.len() <= 4);
        assert_eq!(model.tree.class_names, vec!["no".to_string(), "yes".to_string()]);
        let again = train(&raw, &cfg).unwrap();
        assert_eq!(model.tree.to_json(), again.tree.to_json());
    }

    #[test]
    fn constraint_errors_are_reported() {
        let raw = parse_csv(&toy_csv(), "label", &Default::default()).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.constraints.min_f1 = Some(0.5);
        assert!(train(&raw, &cfg).is_err());
        cfg.constraints.positive_class = Some("maybe".into());
        assert!(train(&raw, &cfg).is_err());
        cfg.constraints.positive_class = Some("yes".into());
        train(&raw, &cfg).unwrap();
    }

    #[test]
    fn tuning_picks_a_candidate() {
        let raw = parse_csv(&toy_csv(), "label", &Default::default()).unwrap();
        let split = split_indices(raw.n_samples, &SplitFractions::default(), 3);
        let cfg = TrainConfig {
            depth: 2,
            ..TrainConfig::default()
        };
        let (bins, model) = tune_bins(&raw, &split, &cfg).unwrap();
        assert!(BIN_CANDIDATES.contains(&bins));
        assert!(model.tree.rules.len() <= 4);
    }
}
