//! Layered feature graph: one layer per feature, one node per admissible
//! value set plus a SKIP node, framed by a source and a sink. Arcs are
//! implicit because consecutive layers are fully connected.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dataset::{BinnedDataset, Encoder, FeatureEncoding, Labels, UNSEEN_CODE};
use crate::error::{OmtError, Result};
use crate::rules::{Rule, RuleConfig};

/// The values a single feature contributes as graph nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDomain {
    pub name: String,
    pub cardinality: u32,
    pub values: Vec<DomainValue>,
}

/// A node condition: base codes `first..=last`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainValue {
    pub first: u32,
    pub last: u32,
    pub label: String,
}

impl FeatureDomain {
    /// One node per base code, labeled by the code.
    pub fn plain(name: impl Into<String>, cardinality: u32) -> FeatureDomain {
        FeatureDomain {
            name: name.into(),
            cardinality,
            values: (0..cardinality)
                .map(|c| DomainValue {
                    first: c,
                    last: c,
                    label: c.to_string(),
                })
                .collect(),
        }
    }

    /// One node per contiguous code range except the full range.
    pub fn cumulative(name: impl Into<String>, cardinality: u32) -> FeatureDomain {
        let mut values = Vec::new();
        for span in 1..cardinality.max(1) {
            for first in 0..=(cardinality - span) {
                let last = first + span - 1;
                values.push(DomainValue {
                    first,
                    last,
                    label: format!("{first}..{last}"),
                });
            }
        }
        if cardinality == 1 {
            values.push(DomainValue {
                first: 0,
                last: 0,
                label: "0".into(),
            });
        }
        FeatureDomain {
            name: name.into(),
            cardinality,
            values,
        }
    }

    /// Domains of every encoded feature, in encoder order.
    pub fn from_encoder(encoder: &Encoder) -> Vec<FeatureDomain> {
        encoder
            .features
            .iter()
            .map(|fe| {
                let values = match &fe.encoding {
                    FeatureEncoding::Categorical { levels } => levels
                        .iter()
                        .enumerate()
                        .map(|(c, l)| DomainValue {
                            first: c as u32,
                            last: c as u32,
                            label: l.clone(),
                        })
                        .collect(),
                    FeatureEncoding::Binned { spec } => spec
                        .intervals
                        .iter()
                        .map(|iv| DomainValue {
                            first: iv.first,
                            last: iv.last,
                            label: fe.describe(iv.first, iv.last),
                        })
                        .collect(),
                };
                FeatureDomain {
                    name: fe.name.clone(),
                    cardinality: fe.cardinality(),
                    values,
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Source,
    Sink,
    Value,
    Skip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub id: usize,
    pub role: NodeRole,
    /// Layer position (index into the feature order); `None` for terminals.
    pub layer: Option<usize>,
    /// Dataset feature index; `None` for terminals.
    pub feature: Option<usize>,
    pub first: u32,
    pub last: u32,
    pub test_cost: f64,
    pub label: String,
}

impl GraphNode {
    pub fn is_skip(&self) -> bool {
        self.role == NodeRole::Skip
    }

    /// Whether a sample with base code `code` satisfies this node.
    #[inline]
    pub fn admits(&self, code: u32) -> bool {
        match self.role {
            NodeRole::Value => code != UNSEEN_CODE && self.first <= code && code <= self.last,
            _ => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub feature: usize,
    /// Node ids of this layer; the last one is the SKIP node.
    pub nodes: Range<usize>,
}

impl Layer {
    pub fn skip(&self) -> usize {
        self.nodes.end - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Restrictions on which nodes may appear together on one path.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributeConstraints {
    /// Pairs of node selectors, each `"feature"` (every value node of the
    /// feature) or `"feature=label"` (one node).
    #[serde(default)]
    pub forbidden_pairs: Vec<(String, String)>,
    /// Test cost of every value node of the named feature.
    #[serde(default)]
    pub node_costs: BTreeMap<String, f64>,
    #[serde(default)]
    pub max_path_cost: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathCount {
    pub value: u128,
    /// Set when the exact count overflowed and `value` is `u128::MAX`.
    pub saturated: bool,
}

#[derive(Clone, Debug)]
pub struct FeatureGraph {
    nodes: Vec<GraphNode>,
    layers: Vec<Layer>,
    feature_order: Vec<usize>,
    feature_names: Vec<String>,
    /// Per node, sorted ids of nodes it may not share a path with.
    forbidden: Vec<Vec<usize>>,
    max_path_cost: Option<f64>,
}

impl FeatureGraph {
    pub fn build(
        domains: &[FeatureDomain],
        feature_order: &[usize],
        constraints: &AttributeConstraints,
    ) -> Result<FeatureGraph> {
        let k = domains.len();
        let mut seen = vec![false; k];
        if feature_order.len() != k
            || feature_order
                .iter()
                .any(|&f| f >= k || std::mem::replace(&mut seen[f], true))
        {
            return Err(OmtError::config(format!(
                "feature order {feature_order:?} is not a permutation of 0..{k}"
            )));
        }
        for (name, &cost) in &constraints.node_costs {
            if !domains.iter().any(|d| &d.name == name) {
                return Err(OmtError::config(format!("node cost for unknown feature '{name}'")));
            }
            if !(cost >= 0.0 && cost.is_finite()) {
                return Err(OmtError::config(format!("node cost for '{name}' must be non-negative")));
            }
        }

        let terminal = |id, role| GraphNode {
            id,
            role,
            layer: None,
            feature: None,
            first: 0,
            last: 0,
            test_cost: 0.0,
            label: if role == NodeRole::Source { "source" } else { "sink" }.into(),
        };
        let mut nodes = vec![terminal(0, NodeRole::Source)];
        let mut layers = Vec::with_capacity(k);
        for (pos, &f) in feature_order.iter().enumerate() {
            let domain = &domains[f];
            let cost = constraints.node_costs.get(&domain.name).copied().unwrap_or(0.0);
            let start = nodes.len();
            for v in &domain.values {
                nodes.push(GraphNode {
                    id: nodes.len(),
                    role: NodeRole::Value,
                    layer: Some(pos),
                    feature: Some(f),
                    first: v.first,
                    last: v.last,
                    test_cost: cost,
                    label: v.label.clone(),
                });
            }
            nodes.push(GraphNode {
                id: nodes.len(),
                role: NodeRole::Skip,
                layer: Some(pos),
                feature: Some(f),
                first: 0,
                last: domain.cardinality.saturating_sub(1),
                test_cost: 0.0,
                label: "SKIP".into(),
            });
            layers.push(Layer {
                feature: f,
                nodes: start..nodes.len(),
            });
        }
        nodes.push(terminal(nodes.len(), NodeRole::Sink));

        let mut graph = FeatureGraph {
            forbidden: vec![Vec::new(); nodes.len()],
            nodes,
            layers,
            feature_order: feature_order.to_vec(),
            feature_names: domains.iter().map(|d| d.name.clone()).collect(),
            max_path_cost: constraints.max_path_cost,
        };
        for (a, b) in &constraints.forbidden_pairs {
            let left = graph.select_nodes(a)?;
            let right = graph.select_nodes(b)?;
            for &u in &left {
                for &v in &right {
                    if graph.nodes[u].feature == graph.nodes[v].feature {
                        return Err(OmtError::config(format!(
                            "forbidden pair ({a}, {b}) must reference two different features"
                        )));
                    }
                    graph.forbidden[u].push(v);
                    graph.forbidden[v].push(u);
                }
            }
        }
        for list in &mut graph.forbidden {
            list.sort_unstable();
            list.dedup();
        }
        Ok(graph)
    }

    /// Resolves a `"feature"` or `"feature=label"` selector to value nodes.
    pub fn select_nodes(&self, selector: &str) -> Result<Vec<usize>> {
        let (name, label) = match selector.split_once('=') {
            Some((n, l)) => (n.trim(), Some(l.trim())),
            None => (selector.trim(), None),
        };
        let feature = self
            .feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| OmtError::config(format!("unknown feature '{name}' in '{selector}'")))?;
        let layer = &self.layers[self.layer_of_feature(feature)];
        let ids: Vec<usize> = layer
            .nodes
            .clone()
            .filter(|&id| !self.nodes[id].is_skip())
            .filter(|&id| label.is_none_or(|l| self.nodes[id].label == l))
            .collect();
        if ids.is_empty() {
            return Err(OmtError::config(format!("selector '{selector}' matches no node")));
        }
        Ok(ids)
    }

    fn layer_of_feature(&self, feature: usize) -> usize {
        self.feature_order
            .iter()
            .position(|&f| f == feature)
            .expect("feature in order")
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &GraphNode {
        &self.nodes[id]
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn source(&self) -> usize {
        0
    }

    pub fn sink(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn feature_order(&self) -> &[usize] {
        &self.feature_order
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn max_path_cost(&self) -> Option<f64> {
        self.max_path_cost
    }

    pub fn forbidden_partners(&self, node: usize) -> &[usize] {
        &self.forbidden[node]
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::len).collect()
    }

    /// Successors of a node: the next layer, or the sink after the last.
    pub fn children(&self, node: usize) -> Range<usize> {
        let next = match self.nodes[node].role {
            NodeRole::Source => 0,
            NodeRole::Sink => return 0..0,
            _ => self.nodes[node].layer.unwrap() + 1,
        };
        match self.layers.get(next) {
            Some(layer) => layer.nodes.clone(),
            None => self.sink()..self.sink() + 1,
        }
    }

    /// Number of source-sink paths, optionally restricted to at most
    /// `max_length` non-SKIP nodes.
    pub fn count_paths(&self, max_length: Option<usize>) -> PathCount {
        let mut saturated = false;
        let mut mul = |a: u128, b: u128| {
            a.checked_mul(b).unwrap_or_else(|| {
                saturated = true;
                u128::MAX
            })
        };
        let d = match max_length {
            Some(d) if d < self.layers.len() => d,
            _ => {
                let mut total: u128 = 1;
                for layer in &self.layers {
                    total = mul(total, layer.len() as u128);
                }
                return PathCount {
                    value: total,
                    saturated,
                };
            }
        };
        // ways[j]: partial paths so far with exactly j value nodes.
        let mut ways = vec![0u128; d + 1];
        ways[0] = 1;
        let mut overflow = false;
        for layer in &self.layers {
            let values = (layer.len() - 1) as u128;
            for j in (0..=d).rev() {
                let from_value = if j > 0 {
                    ways[j - 1].checked_mul(values)
                } else {
                    Some(0)
                };
                ways[j] = from_value.and_then(|x| x.checked_add(ways[j])).unwrap_or_else(|| {
                    overflow = true;
                    u128::MAX
                });
            }
        }
        let total = ways.iter().try_fold(0u128, |acc, &w| acc.checked_add(w));
        match total {
            Some(v) if !overflow => PathCount {
                value: v,
                saturated: false,
            },
            _ => PathCount {
                value: u128::MAX,
                saturated: true,
            },
        }
    }

    /// Orders features by single-feature information gain on `data`,
    /// highest first (variance reduction for real labels). Ties keep
    /// column order.
    pub fn gain_order(data: &BinnedDataset) -> Vec<usize> {
        let gains: Vec<f64> = (0..data.n_features()).map(|f| feature_gain(data, f)).collect();
        let mut order: Vec<usize> = (0..data.n_features()).collect();
        order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
        order
    }
}

fn feature_gain(data: &BinnedDataset, f: usize) -> f64 {
    let card = data.cardinalities()[f] as usize;
    let n = data.n_samples() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let codes = data.codes(f);
    let bucket = |c: u32| if c == UNSEEN_CODE { card } else { c as usize };
    match data.labels() {
        Labels::Classes { ids, n_classes } => {
            let k = *n_classes as usize;
            let mut table = vec![0usize; (card + 1) * k];
            let mut totals = vec![0usize; k];
            for (&c, &y) in codes.iter().zip(ids) {
                table[bucket(c) * k + y as usize] += 1;
                totals[y as usize] += 1;
            }
            let entropy = |counts: &[usize]| {
                let m: usize = counts.iter().sum();
                if m == 0 {
                    return 0.0;
                }
                counts
                    .iter()
                    .filter(|&&c| c > 0)
                    .map(|&c| {
                        let p = c as f64 / m as f64;
                        -p * p.ln()
                    })
                    .sum::<f64>()
            };
            let conditional: f64 = table
                .chunks(k)
                .map(|row| row.iter().sum::<usize>() as f64 / n * entropy(row))
                .sum();
            entropy(&totals) - conditional
        }
        Labels::Real(y) => {
            let mut sums = vec![(0usize, 0.0f64, 0.0f64); card + 1];
            for (&c, &v) in codes.iter().zip(y) {
                let s = &mut sums[bucket(c)];
                s.0 += 1;
                s.1 += v;
                s.2 += v * v;
            }
            let sse = |(m, s, s2): (usize, f64, f64)| {
                if m == 0 {
                    0.0
                } else {
                    (s2 - s * s / m as f64).max(0.0)
                }
            };
            let total = sums
                .iter()
                .fold((0usize, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
            (sse(total) - sums.iter().map(|&s| sse(s)).sum::<f64>()) / n
        }
    }
}

/// Every feasible rule of the graph, each exactly once, in depth-first
/// order. Refuses when the length-constrained path count exceeds `cap`.
pub fn enumerate_paths(
    graph: &FeatureGraph,
    data: &BinnedDataset,
    config: &RuleConfig,
    cap: u128,
) -> Result<Vec<Rule>> {
    let count = graph.count_paths(Some(config.max_length));
    if count.saturated || count.value > cap {
        return Err(OmtError::TooManyPaths {
            count: count.value,
            cap,
        });
    }
    let mut out = Vec::new();
    let root = Rule::root(data, config);
    enumerate_from(graph, data, config, root, &mut out);
    Ok(out)
}

fn enumerate_from(graph: &FeatureGraph, data: &BinnedDataset, config: &RuleConfig, rule: Rule, out: &mut Vec<Rule>) {
    let Some(layer) = graph.layers().get(rule.next_layer()) else {
        if rule.satisfies_path_constraints(config) {
            out.push(rule);
        }
        return;
    };
    for node in layer.nodes.clone() {
        if let Some(next) = rule.extend(graph, node, data, config) {
            enumerate_from(graph, data, config, next, out);
        }
    }
}
