//! Candidate rules (source-sink paths), their covered samples and
//! statistics, and the extension step used while sweeping the graph.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{BinnedDataset, Labels};
use crate::error::{OmtError, Result};
use crate::feature_graph::FeatureGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Misclassification,
    SquaredError,
    AbsoluteError,
}

impl MetricKind {
    pub fn is_regression(self) -> bool {
        !matches!(self, MetricKind::Misclassification)
    }
}

/// Feasibility and scoring settings shared by every rule of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleConfig {
    pub metric: MetricKind,
    /// Maximum number of value (non-SKIP) nodes, the tree depth d.
    pub max_length: usize,
    /// Minimum cover size of any rule that tests at least one feature.
    pub min_support: usize,
    /// Class treated as positive by F1 and fairness statistics.
    pub positive_class: Option<u32>,
    /// Per-rule bound on the spread of group positive rates.
    pub fairness_delta: Option<f64>,
    /// Added to a rule's objective coefficient for each condition it tests.
    pub condition_cost: f64,
}

impl RuleConfig {
    pub fn new(metric: MetricKind) -> RuleConfig {
        RuleConfig {
            metric,
            max_length: usize::MAX,
            min_support: 1,
            positive_class: None,
            fairness_delta: None,
            condition_cost: 0.0,
        }
    }

    /// Checks the metric against the label type of `data`.
    pub fn validate(&self, data: &BinnedDataset) -> Result<()> {
        match (self.metric.is_regression(), data.labels()) {
            (true, Labels::Classes { .. }) => Err(OmtError::config("regression metrics need real-valued labels")),
            (false, Labels::Real(_)) => Err(OmtError::config("misclassification needs class labels")),
            _ => Ok(()),
        }?;
        if self.fairness_delta.is_some() {
            if data.group_feature().is_none() {
                return Err(OmtError::config("fairness constraints need a group feature"));
            }
            if self.positive_class.is_none() {
                return Err(OmtError::config("fairness constraints need a positive class"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Class(u32),
    Value(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u32,
    pub fp: u32,
    pub fn_: u32,
}

/// A path through the feature graph together with the samples it covers.
///
/// Partial paths (those that have not crossed every layer yet) are rules
/// too: the remaining layers are read as SKIP.
#[derive(Clone, Debug)]
pub struct Rule {
    /// Value nodes visited, in layer order. Doubles as the rule signature.
    nodes: Vec<usize>,
    /// Number of layers already crossed.
    next_layer: usize,
    cover: Arc<[u32]>,
    class_counts: Arc<[u32]>,
    /// `group * n_classes + class` counts over the cover.
    group_counts: Arc<[u32]>,
    sum_y: f64,
    sum_y2: f64,
    loss: f64,
    cost: f64,
    prediction: Prediction,
    path_cost: f64,
}

impl Rule {
    /// The empty path at the source, covering every sample.
    pub fn root(data: &BinnedDataset, config: &RuleConfig) -> Rule {
        let cover: Vec<u32> = (0..data.n_samples() as u32).collect();
        Rule::with_cover(Vec::new(), 0, cover.into(), 0.0, data, config)
    }

    fn with_cover(
        nodes: Vec<usize>,
        next_layer: usize,
        cover: Arc<[u32]>,
        path_cost: f64,
        data: &BinnedDataset,
        config: &RuleConfig,
    ) -> Rule {
        let mut class_counts: Vec<u32> = Vec::new();
        let mut group_counts: Vec<u32> = Vec::new();
        let (mut sum_y, mut sum_y2) = (0.0, 0.0);
        let (loss, prediction) = match data.labels() {
            Labels::Classes { ids, n_classes } => {
                let k = *n_classes as usize;
                class_counts = vec![0; k];
                for &i in cover.iter() {
                    class_counts[ids[i as usize] as usize] += 1;
                }
                if let Some(g) = data.group_feature() {
                    group_counts = vec![0; data.n_groups() * k];
                    let groups = data.codes(g);
                    for &i in cover.iter() {
                        let group = groups[i as usize];
                        if (group as usize) < data.n_groups() {
                            group_counts[group as usize * k + ids[i as usize] as usize] += 1;
                        }
                    }
                }
                let (best, &top) = class_counts
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                    .unwrap_or((0, &0));
                ((cover.len() as u32 - top) as f64, Prediction::Class(best as u32))
            }
            Labels::Real(y) => {
                let values: Vec<f64> = cover.iter().map(|&i| y[i as usize]).collect();
                for &v in &values {
                    sum_y += v;
                    sum_y2 += v * v;
                }
                regression_loss(values, config.metric)
            }
        };
        let cost = loss + config.condition_cost * nodes.len() as f64;
        Rule {
            nodes,
            next_layer,
            cover,
            class_counts: class_counts.into(),
            group_counts: group_counts.into(),
            sum_y,
            sum_y2,
            loss,
            cost,
            prediction,
            path_cost,
        }
    }

    /// Extends the path by `node`, which must belong to the next layer.
    ///
    /// Returns `None` when the result breaks the length limit, minimum
    /// support, a forbidden pair or the path cost budget. Per-rule
    /// fairness is not checked here; see
    /// [`Rule::satisfies_path_constraints`].
    ///
    /// # Panics
    /// If `node` is not in the layer following the path.
    pub fn extend(&self, graph: &FeatureGraph, node: usize, data: &BinnedDataset, config: &RuleConfig) -> Option<Rule> {
        self.extend_with_duals(graph, node, data, config, None)
            .map(|(rule, _)| rule)
    }

    /// Like [`Rule::extend`], also returning the sum of `lambda` over the
    /// new cover (zero for SKIP nodes, whose cover is unchanged).
    pub(crate) fn extend_with_duals(
        &self,
        graph: &FeatureGraph,
        node_id: usize,
        data: &BinnedDataset,
        config: &RuleConfig,
        lambda: Option<&[f64]>,
    ) -> Option<(Rule, f64)> {
        let node = graph.node(node_id);
        assert_eq!(
            node.layer,
            Some(self.next_layer),
            "node {node_id} is not in layer {} of the graph",
            self.next_layer
        );
        if node.is_skip() {
            let mut next = self.clone();
            next.next_layer += 1;
            return Some((next, 0.0));
        }
        if self.nodes.len() + 1 > config.max_length {
            return None;
        }
        let partners = graph.forbidden_partners(node_id);
        if !partners.is_empty() && self.nodes.iter().any(|v| partners.binary_search(v).is_ok()) {
            return None;
        }
        let path_cost = self.path_cost + node.test_cost;
        if let Some(max) = graph.max_path_cost() {
            if path_cost > max + 1e-12 {
                return None;
            }
        }
        let codes = data.codes(node.feature.expect("value node has a feature"));
        let cover: Vec<u32> = self
            .cover
            .iter()
            .copied()
            .filter(|&i| node.admits(codes[i as usize]))
            .collect();
        if cover.len() < config.min_support {
            return None;
        }
        let lambda_sum = lambda.map_or(0.0, |l| cover.iter().map(|&i| l[i as usize]).sum());
        let mut nodes = Vec::with_capacity(self.nodes.len() + 1);
        nodes.extend_from_slice(&self.nodes);
        nodes.push(node_id);
        let rule = Rule::with_cover(nodes, self.next_layer + 1, cover.into(), path_cost, data, config);
        Some((rule, lambda_sum))
    }

    /// Checks the per-rule constraints that are not monotone along a path
    /// and so can only be applied to finished rules.
    pub fn satisfies_path_constraints(&self, config: &RuleConfig) -> bool {
        match (config.fairness_delta, config.positive_class) {
            (Some(delta), Some(pos)) => self.disparity(pos) <= delta + 1e-12,
            _ => true,
        }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn signature(&self) -> &[usize] {
        &self.nodes
    }

    pub fn next_layer(&self) -> usize {
        self.next_layer
    }

    pub fn cover(&self) -> &[u32] {
        &self.cover
    }

    pub fn support(&self) -> usize {
        self.cover.len()
    }

    pub fn length(&self) -> usize {
        self.nodes.len()
    }

    pub fn class_counts(&self) -> &[u32] {
        &self.class_counts
    }

    pub fn group_counts(&self) -> &[u32] {
        &self.group_counts
    }

    pub fn sum_y(&self) -> f64 {
        self.sum_y
    }

    pub fn sum_y2(&self) -> f64 {
        self.sum_y2
    }

    /// The rule's loss ξ under the configured metric.
    pub fn loss(&self) -> f64 {
        self.loss
    }

    /// Objective coefficient of the rule's column: the loss plus the
    /// configured cost per condition.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn prediction(&self) -> Prediction {
        self.prediction
    }

    pub fn predicted_class(&self) -> Option<u32> {
        match self.prediction {
            Prediction::Class(c) => Some(c),
            Prediction::Value(_) => None,
        }
    }

    pub fn path_cost(&self) -> f64 {
        self.path_cost
    }

    /// Counts relative to `positive`. A rule not predicting the positive
    /// class has no true or false positives; all its positives are missed.
    pub fn confusion(&self, positive: u32) -> Confusion {
        let pos = self.class_counts.get(positive as usize).copied().unwrap_or(0);
        if self.predicted_class() == Some(positive) {
            Confusion {
                tp: pos,
                fp: self.cover.len() as u32 - pos,
                fn_: 0,
            }
        } else {
            Confusion { tp: 0, fp: 0, fn_: pos }
        }
    }

    /// Per group, the share of its covered samples labeled `positive`
    /// (zero for groups absent from the cover).
    pub fn group_rates(&self, positive: u32) -> Vec<f64> {
        let k = self.class_counts.len();
        if k == 0 {
            return Vec::new();
        }
        self.group_counts
            .chunks(k)
            .map(|row| {
                let total: u32 = row.iter().sum();
                if total == 0 {
                    0.0
                } else {
                    row.get(positive as usize).copied().unwrap_or(0) as f64 / total as f64
                }
            })
            .collect()
    }

    /// Spread between the highest and lowest group positive rate.
    pub fn disparity(&self, positive: u32) -> f64 {
        let rates = self.group_rates(positive);
        let max = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
        if rates.is_empty() {
            0.0
        } else {
            max - min
        }
    }

    /// Whether a sample given by its per-feature codes satisfies every
    /// condition of the rule.
    pub fn matches(&self, graph: &FeatureGraph, row: &[u32]) -> bool {
        self.nodes.iter().all(|&v| {
            let node = graph.node(v);
            node.admits(row[node.feature.unwrap()])
        })
    }

    pub fn describe(&self, graph: &FeatureGraph) -> String {
        if self.nodes.is_empty() {
            return "(always)".into();
        }
        let parts: Vec<String> = self
            .nodes
            .iter()
            .map(|&v| {
                let node = graph.node(v);
                format!("{} = {}", graph.feature_names()[node.feature.unwrap()], node.label)
            })
            .collect();
        parts.join(" AND ")
    }
}

/// Loss and point prediction of a regression leaf over `values`.
fn regression_loss(mut values: Vec<f64>, metric: MetricKind) -> (f64, Prediction) {
    if values.is_empty() {
        return (0.0, Prediction::Value(0.0));
    }
    match metric {
        MetricKind::AbsoluteError => {
            values.sort_by(f64::total_cmp);
            let n = values.len();
            let median = if n % 2 == 1 {
                values[n / 2]
            } else {
                0.5 * (values[n / 2 - 1] + values[n / 2])
            };
            let loss = values.iter().map(|v| (v - median).abs()).sum();
            (loss, Prediction::Value(median))
        }
        _ => {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let loss = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (loss, Prediction::Value(mean))
        }
    }
}
