//! Multiway decision trees assembled from selected rules: prediction,
//! evaluation, JSON/DOT export and a greedy Gini baseline learner.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{BinnedDataset, Encoder, Labels, TaskKind, UNSEEN_CODE};
use crate::error::{OmtError, Result};
use crate::feature_graph::FeatureGraph;
use crate::master::{MasterProblem, MipSolution};
use crate::rules::Prediction;

pub const TREE_SCHEMA: &str = "omt-tree/1";

/// One test of a rule: the sample's code for `feature` lies in
/// `first..=last`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: usize,
    pub name: String,
    pub first: u32,
    pub last: u32,
    /// Human-readable value set, e.g. `high|med` or `[2.5, 4)`.
    pub values: String,
}

impl Condition {
    #[inline]
    pub fn admits(&self, code: u32) -> bool {
        code != UNSEEN_CODE && self.first <= code && code <= self.last
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRule {
    /// Conditions in feature-order position.
    pub conditions: Vec<Condition>,
    pub label: Prediction,
    /// Training samples routed to this leaf.
    pub support: usize,
    /// Index in the column pool the rule came from, if any.
    pub pool_index: Option<usize>,
}

impl TreeRule {
    pub fn length(&self) -> usize {
        self.conditions.len()
    }

    pub fn matches(&self, row: &[u32]) -> bool {
        self.conditions.iter().all(|c| c.admits(row[c.feature]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiwayTree {
    pub schema: String,
    pub task: TaskKind,
    pub feature_names: Vec<String>,
    pub feature_order: Vec<usize>,
    pub class_names: Vec<String>,
    pub depth: usize,
    pub leaf_budget: usize,
    /// Ordered by descending length, then ascending pool index.
    pub rules: Vec<TreeRule>,
    pub fallback: Prediction,
    /// Raw-data encoding fitted on the training data; needed to predict
    /// from CSV files.
    pub encoder: Option<Encoder>,
}

/// Global majority class (lowest id on ties) or global mean.
pub fn fallback_label(data: &BinnedDataset) -> Prediction {
    match data.labels() {
        Labels::Classes { ids, n_classes } => {
            let mut counts = vec![0usize; *n_classes as usize];
            for &y in ids {
                counts[y as usize] += 1;
            }
            let best = counts
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map_or(0, |(c, _)| c);
            Prediction::Class(best as u32)
        }
        Labels::Real(y) => {
            let mean = if y.is_empty() {
                0.0
            } else {
                y.iter().sum::<f64>() / y.len() as f64
            };
            Prediction::Value(mean)
        }
    }
}

/// Builds the tree from an integer solution over the pool of `master`.
pub fn assemble_tree(
    mip: &MipSolution,
    master: &MasterProblem,
    graph: &FeatureGraph,
    data: &BinnedDataset,
    depth: usize,
) -> MultiwayTree {
    let mut rules: Vec<TreeRule> = mip
        .selected
        .iter()
        .map(|&j| {
            let rule = &master.pool[j];
            let conditions = rule
                .nodes()
                .iter()
                .map(|&v| {
                    let node = graph.node(v);
                    let feature = node.feature.expect("value node has a feature");
                    Condition {
                        feature,
                        name: graph.feature_names()[feature].clone(),
                        first: node.first,
                        last: node.last,
                        values: node.label.clone(),
                    }
                })
                .collect();
            TreeRule {
                conditions,
                label: rule.prediction(),
                support: rule.support(),
                pool_index: Some(j),
            }
        })
        .collect();
    sort_rules(&mut rules);
    MultiwayTree {
        schema: TREE_SCHEMA.into(),
        task: data.task(),
        feature_names: data.feature_names().to_vec(),
        feature_order: graph.feature_order().to_vec(),
        class_names: (0..data.n_classes()).map(|c| c.to_string()).collect(),
        depth,
        leaf_budget: master.leaf_budget,
        rules,
        fallback: fallback_label(data),
        encoder: None,
    }
}

fn sort_rules(rules: &mut [TreeRule]) {
    rules.sort_by(|a, b| b.length().cmp(&a.length()).then(a.pool_index.cmp(&b.pool_index)));
}

impl MultiwayTree {
    /// Attaches the fitted encoder, taking class names from it.
    pub fn with_encoder(mut self, encoder: Encoder) -> MultiwayTree {
        if !encoder.class_names().is_empty() {
            self.class_names = encoder.class_names().to_vec();
        }
        self.encoder = Some(encoder);
        self
    }

    /// Index of the first rule matching `row`, in rule order.
    pub fn route(&self, row: &[u32]) -> Option<usize> {
        self.rules.iter().position(|r| r.matches(row))
    }

    /// Label of the first matching rule, else the fallback.
    pub fn predict(&self, row: &[u32]) -> Prediction {
        self.route(row).map_or(self.fallback, |j| self.rules[j].label)
    }

    pub fn predict_dataset(&self, data: &BinnedDataset) -> Vec<Prediction> {
        let mut row = vec![0u32; data.n_features()];
        (0..data.n_samples())
            .map(|i| {
                for (f, slot) in row.iter_mut().enumerate() {
                    *slot = data.code(f, i);
                }
                self.predict(&row)
            })
            .collect()
    }

    /// Display form of a prediction: the class name or the value.
    pub fn label_name(&self, p: Prediction) -> String {
        match p {
            Prediction::Class(c) => self
                .class_names
                .get(c as usize)
                .cloned()
                .unwrap_or_else(|| c.to_string()),
            Prediction::Value(v) => format!("{v}"),
        }
    }

    /// Samples breaking the training partition: non-slack samples must
    /// match exactly one rule and slack samples none.
    pub fn partition_violations(&self, data: &BinnedDataset, slack: &[u32]) -> Vec<u32> {
        let mut is_slack = vec![false; data.n_samples()];
        for &i in slack {
            is_slack[i as usize] = true;
        }
        let mut row = vec![0u32; data.n_features()];
        (0..data.n_samples())
            .filter(|&i| {
                for (f, slot) in row.iter_mut().enumerate() {
                    *slot = data.code(f, i);
                }
                let hits = self.rules.iter().filter(|r| r.matches(&row)).count();
                hits != usize::from(!is_slack[i])
            })
            .map(|i| i as u32)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<MultiwayTree> {
        let tree: MultiwayTree = serde_json::from_str(text)?;
        if tree.schema != TREE_SCHEMA {
            return Err(OmtError::Model(format!(
                "unsupported tree schema '{}', expected '{TREE_SCHEMA}'",
                tree.schema
            )));
        }
        let k = tree.feature_names.len();
        if tree.rules.iter().flat_map(|r| &r.conditions).any(|c| c.feature >= k) {
            return Err(OmtError::Model("rule condition refers to an unknown feature".into()));
        }
        Ok(tree)
    }

    /// Trie view in DOT: nodes test features in feature order, edges carry
    /// the admitted values ("any" for a skipped feature), boxes are leaves.
    pub fn to_dot(&self) -> String {
        let trie = Trie::build(self);
        let mut out = String::from("digraph tree {\n  node [fontname=\"Helvetica\"];\n");
        for (id, node) in trie.nodes.iter().enumerate() {
            let leaf = node.leaf.map(|j| {
                let r = &self.rules[j];
                format!("{} (n={})", self.label_name(r.label), r.support)
            });
            let (shape, text) = match (node.children.is_empty(), leaf) {
                (true, Some(l)) => ("box", l),
                (true, None) => ("box", format!("fallback: {}", self.label_name(self.fallback))),
                (false, leaf) => {
                    let feature = self.feature_names[self.feature_order[node.depth]].clone();
                    match leaf {
                        Some(l) => ("ellipse", format!("{feature}\\n{l}")),
                        None => ("ellipse", feature),
                    }
                }
            };
            let _ = writeln!(out, "  n{id} [shape={shape}, label=\"{}\"];", escape(&text));
            for (edge, child) in &node.children {
                let _ = writeln!(out, "  n{id} -> n{child} [label=\"{}\"];", escape(edge));
            }
        }
        out.push_str("}\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace("\\\\n", "\\n")
}

struct TrieNode {
    depth: usize,
    leaf: Option<usize>,
    children: Vec<(String, usize)>,
}

struct Trie {
    nodes: Vec<TrieNode>,
}

impl Trie {
    fn build(tree: &MultiwayTree) -> Trie {
        let mut nodes = vec![TrieNode {
            depth: 0,
            leaf: None,
            children: Vec::new(),
        }];
        let position: BTreeMap<usize, usize> = tree.feature_order.iter().enumerate().map(|(p, &f)| (f, p)).collect();
        // Insert shallow rules first so the picture reads like a tree.
        let mut order: Vec<usize> = (0..tree.rules.len()).collect();
        order.sort_by_key(|&j| (tree.rules[j].length(), j));
        for j in order {
            let rule = &tree.rules[j];
            let mut by_pos: BTreeMap<usize, &Condition> = BTreeMap::new();
            for c in &rule.conditions {
                by_pos.insert(position.get(&c.feature).copied().unwrap_or(usize::MAX), c);
            }
            let last = by_pos.keys().next_back().map_or(0, |&p| p + 1);
            let mut at = 0;
            for p in 0..last {
                let edge = by_pos.get(&p).map_or_else(|| "any".to_string(), |c| c.values.clone());
                at = match nodes[at].children.iter().find(|(e, _)| *e == edge) {
                    Some(&(_, child)) => child,
                    None => {
                        nodes.push(TrieNode {
                            depth: p + 1,
                            leaf: None,
                            children: Vec::new(),
                        });
                        let id = nodes.len() - 1;
                        nodes[at].children.push((edge, id));
                        id
                    }
                };
            }
            nodes[at].leaf.get_or_insert(j);
        }
        Trie { nodes }
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    /// Share of correct predictions (classification only).
    pub accuracy: Option<f64>,
    /// F1 of class 1 for binary problems.
    pub f1: Option<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    /// Share of samples matching at least one rule.
    pub coverage: f64,
    pub n_rules: usize,
    pub mean_rule_length: f64,
}

pub fn evaluate(tree: &MultiwayTree, data: &BinnedDataset) -> EvalReport {
    let n = data.n_samples();
    let mut row = vec![0u32; data.n_features()];
    let mut covered = 0usize;
    let mut predictions = Vec::with_capacity(n);
    for i in 0..n {
        for (f, slot) in row.iter_mut().enumerate() {
            *slot = data.code(f, i);
        }
        let hit = tree.route(&row);
        covered += usize::from(hit.is_some());
        predictions.push(hit.map_or(tree.fallback, |j| tree.rules[j].label));
    }
    let n_rules = tree.rules.len();
    let mean_rule_length = if n_rules == 0 {
        0.0
    } else {
        tree.rules.iter().map(TreeRule::length).sum::<usize>() as f64 / n_rules as f64
    };
    let share = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    let mut report = EvalReport {
        n_samples: n,
        accuracy: None,
        f1: None,
        confusion: Vec::new(),
        mse: None,
        mae: None,
        coverage: share(covered),
        n_rules,
        mean_rule_length,
    };
    match data.labels() {
        Labels::Classes { ids, n_classes } => {
            let k = (*n_classes as usize).max(tree.class_names.len());
            let mut confusion = vec![vec![0usize; k]; k];
            let mut correct = 0;
            for (&y, p) in ids.iter().zip(&predictions) {
                let p = match *p {
                    Prediction::Class(c) => c as usize,
                    Prediction::Value(v) => v.round().max(0.0) as usize,
                };
                if p == y as usize {
                    correct += 1;
                }
                if p < k {
                    confusion[y as usize][p] += 1;
                }
            }
            if k == 2 {
                let tp = confusion[1][1] as f64;
                let denom = 2.0 * tp + confusion[0][1] as f64 + confusion[1][0] as f64;
                report.f1 = Some(if denom == 0.0 { 0.0 } else { 2.0 * tp / denom });
            }
            report.accuracy = Some(share(correct));
            report.confusion = confusion;
        }
        Labels::Real(y) => {
            let (mut se, mut ae) = (0.0, 0.0);
            for (&v, p) in y.iter().zip(&predictions) {
                let p = match *p {
                    Prediction::Value(x) => x,
                    Prediction::Class(c) => c as f64,
                };
                se += (v - p) * (v - p);
                ae += (v - p).abs();
            }
            let denom = n.max(1) as f64;
            report.mse = Some(se / denom);
            report.mae = Some(ae / denom);
        }
    }
    report
}

// ---------------------------------------------------------------------------

/// Top-down multiway tree: each node splits on the unused feature with the
/// lowest weighted Gini impurity, one child per observed value. A node
/// stays a leaf at depth `depth`, when pure, when it holds fewer than
/// `2 * min_support` samples, or when no split lowers the impurity.
///
/// # Panics
/// On regression data.
pub fn greedy_baseline(data: &BinnedDataset, depth: usize, min_support: usize) -> MultiwayTree {
    let ids = data.class_ids().expect("the greedy baseline needs class labels");
    let k = data.n_classes();
    let mut leaves: Vec<(Vec<Condition>, Vec<u32>)> = Vec::new();
    let all: Vec<u32> = (0..data.n_samples() as u32).collect();
    let mut stack = vec![(Vec::<Condition>::new(), all)];
    while let Some((conds, samples)) = stack.pop() {
        let counts = class_counts(ids, &samples, k);
        let impurity = gini(&counts, samples.len());
        let can_split = conds.len() < depth && impurity > 0.0 && samples.len() >= 2 * min_support.max(1);
        let best = if can_split {
            best_split(data, ids, k, &samples, &conds, impurity)
        } else {
            None
        };
        let Some(f) = best else {
            if !conds.is_empty() {
                leaves.push((conds, samples));
            }
            continue;
        };
        let card = data.cardinalities()[f] as usize;
        let mut parts: Vec<Vec<u32>> = vec![Vec::new(); card];
        for &i in &samples {
            let c = data.code(f, i as usize);
            if c != UNSEEN_CODE {
                parts[c as usize].push(i);
            }
        }
        for (code, part) in parts.into_iter().enumerate().rev() {
            if part.is_empty() {
                continue;
            }
            let mut next = conds.clone();
            next.push(Condition {
                feature: f,
                name: data.feature_names()[f].clone(),
                first: code as u32,
                last: code as u32,
                values: code.to_string(),
            });
            next.sort_by_key(|c| c.feature);
            stack.push((next, part));
        }
    }
    let mut rules: Vec<TreeRule> = leaves
        .into_iter()
        .enumerate()
        .map(|(j, (conditions, samples))| {
            let counts = class_counts(ids, &samples, k);
            let best = counts
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map_or(0, |(c, _)| c);
            TreeRule {
                conditions,
                label: Prediction::Class(best as u32),
                support: samples.len(),
                pool_index: Some(j),
            }
        })
        .collect();
    sort_rules(&mut rules);
    let n_rules = rules.len();
    MultiwayTree {
        schema: TREE_SCHEMA.into(),
        task: TaskKind::Classification,
        feature_names: data.feature_names().to_vec(),
        feature_order: (0..data.n_features()).collect(),
        class_names: (0..k).map(|c| c.to_string()).collect(),
        depth,
        leaf_budget: n_rules,
        rules,
        fallback: fallback_label(data),
        encoder: None,
    }
}

fn class_counts(ids: &[u32], samples: &[u32], k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; k];
    for &i in samples {
        counts[ids[i as usize] as usize] += 1;
    }
    counts
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn best_split(
    data: &BinnedDataset,
    ids: &[u32],
    k: usize,
    samples: &[u32],
    used: &[Condition],
    parent: f64,
) -> Option<usize> {
    let n = samples.len() as f64;
    let mut best: Option<(f64, usize)> = None;
    for f in 0..data.n_features() {
        if used.iter().any(|c| c.feature == f) {
            continue;
        }
        let card = data.cardinalities()[f] as usize;
        let mut table = vec![0usize; (card + 1) * k];
        for &i in samples {
            let c = data.code(f, i as usize);
            let bucket = if c == UNSEEN_CODE { card } else { c as usize };
            table[bucket * k + ids[i as usize] as usize] += 1;
        }
        let weighted: f64 = table
            .chunks(k)
            .map(|row| {
                let m: usize = row.iter().sum();
                m as f64 / n * gini(row, m)
            })
            .sum();
        if weighted < parent - 1e-12 && best.is_none_or(|(b, _)| weighted < b - 1e-12) {
            best = Some((weighted, f));
        }
    }
    best.map(|(_, f)| f)
}
