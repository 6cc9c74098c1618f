//! Gradient-boosted regression trees under binary logistic loss.
//!
//! Each round fits a depth-limited least-squares tree to the residuals
//! `y - p` (the negative gradient), using exact greedy splits over sorted
//! feature values. Leaf outputs are Newton steps `sum(r) / sum(p(1-p))`,
//! halved until the training loss does not increase.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, SubflowClassifier, SubflowPrediction};
use crate::error::{Error, Result};
use crate::features::{FeatureSet, FeatureVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    /// Row fraction drawn (without replacement) for each tree.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            trees: 100,
            max_depth: 4,
            learning_rate: 0.1,
            min_leaf: 5,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl GbdtParams {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.min_leaf == 0 {
            return Err(Error::invalid("min_leaf must be at least 1"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::invalid(format!(
                "subsample must lie in (0, 1], got {}",
                self.subsample
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// Node arena; node 0 is the root and children always follow their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![TreeNode::Leaf { value }],
        }
    }

    fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn evaluate(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            TreeNode::Leaf { value } => value,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, left).max(walk(nodes, right))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// Structural checks used when loading untrusted model files.
    pub(crate) fn validate(&self, arity: usize) -> std::result::Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                TreeNode::Leaf { value } if !value.is_finite() => {
                    return Err(format!("node {i}: non-finite leaf value"))
                }
                TreeNode::Leaf { .. } => {}
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= arity {
                        return Err(format!("node {i}: feature {feature} >= arity {arity}"));
                    }
                    if !threshold.is_finite() {
                        return Err(format!("node {i}: non-finite threshold"));
                    }
                    for child in [left, right] {
                        if child <= i || child >= self.nodes.len() {
                            return Err(format!("node {i}: bad child index {child}"));
                        }
                        parents[child] += 1;
                    }
                }
            }
        }
        if parents.iter().skip(1).any(|&p| p != 1) || parents[0] != 0 {
            return Err("nodes do not form a tree".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub schema: FeatureSet,
    pub params: GbdtParams,
    /// Log-odds of `unknown` in the training data.
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl GbdtModel {
    /// Raw additive score before the logistic link.
    pub fn margin(&self, row: &[f64]) -> f64 {
        let mut f = self.base_score;
        for tree in &self.trees {
            f += self.learning_rate * tree.evaluate(row);
        }
        f
    }
}

impl SubflowClassifier for GbdtModel {
    fn schema(&self) -> FeatureSet {
        self.schema
    }

    fn predict_row(&self, row: &[f64]) -> SubflowPrediction {
        SubflowPrediction::from_score(logistic(self.margin(row)))
    }
}

pub fn predict_gbdt(model: &GbdtModel, v: &FeatureVector) -> Result<SubflowPrediction> {
    model.predict(v)
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_loss(margins: &[f64], targets: &[f64]) -> f64 {
    margins
        .iter()
        .zip(targets)
        .map(|(&f, &y)| softplus(f) - y * f)
        .sum()
}

/// Cap on a single leaf's Newton step.
const MAX_LEAF_VALUE: f64 = 10.0;
const MIN_GAIN: f64 = 1e-12;
const MAX_BACKTRACKS: usize = 40;
const UNASSIGNED: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Clone, Copy, Default)]
struct Accumulator {
    sum: f64,
    count: usize,
    last: f64,
}

struct TreeBuilder<'a> {
    data: &'a LabeledDataset,
    sorted: &'a [Vec<u32>],
    max_depth: usize,
    min_leaf: usize,
}

impl TreeBuilder<'_> {
    /// Fits a least-squares tree to `residuals` over rows with
    /// `node_of[i] == 0`, returning the tree with placeholder leaves and the
    /// final node assignment of every sampled row.
    fn grow(&self, residuals: &[f64], node_of: &mut [u32]) -> Vec<TreeNode> {
        let d = self.data.arity();
        let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
        // (sum of residuals, row count) per node
        let mut totals = vec![(0.0f64, 0usize)];
        for (i, &node) in node_of.iter().enumerate() {
            if node == 0 {
                totals[0].0 += residuals[i];
                totals[0].1 += 1;
            }
        }
        let mut open: Vec<usize> = vec![0];

        for _depth in 0..self.max_depth {
            if open.is_empty() {
                break;
            }
            let mut slot_of = vec![usize::MAX; nodes.len()];
            for (slot, &node) in open.iter().enumerate() {
                slot_of[node] = slot;
            }
            let mut best: Vec<Option<SplitCandidate>> = vec![None; open.len()];

            for feature in 0..d {
                let mut acc = vec![Accumulator::default(); open.len()];
                for &row in &self.sorted[feature] {
                    let row = row as usize;
                    let node = node_of[row];
                    if node == UNASSIGNED {
                        continue;
                    }
                    let slot = slot_of[node as usize];
                    if slot == usize::MAX {
                        continue;
                    }
                    let x = self.data.row(row)[feature];
                    let a = &mut acc[slot];
                    let (sum, n) = totals[open[slot]];
                    if a.count >= self.min_leaf && n - a.count >= self.min_leaf && x > a.last {
                        let right = sum - a.sum;
                        let gain = a.sum * a.sum / a.count as f64
                            + right * right / (n - a.count) as f64
                            - sum * sum / n as f64;
                        if gain > MIN_GAIN && best[slot].is_none_or(|b| gain > b.gain) {
                            best[slot] = Some(SplitCandidate {
                                gain,
                                feature,
                                threshold: a.last,
                            });
                        }
                    }
                    a.sum += residuals[row];
                    a.count += 1;
                    a.last = x;
                }
            }

            let mut next_open = Vec::new();
            let mut children_of = vec![None; nodes.len()];
            for (slot, &node) in open.iter().enumerate() {
                if let Some(split) = best[slot] {
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    nodes.push(TreeNode::Leaf { value: 0.0 });
                    totals.push((0.0, 0));
                    totals.push((0.0, 0));
                    nodes[node] = TreeNode::Split {
                        feature: split.feature,
                        threshold: split.threshold,
                        left,
                        right,
                    };
                    children_of[node] = Some((split.feature, split.threshold, left, right));
                    next_open.push(left);
                    next_open.push(right);
                }
            }
            if next_open.is_empty() {
                break;
            }
            for (row, node) in node_of.iter_mut().enumerate() {
                if *node == UNASSIGNED {
                    continue;
                }
                if let Some((feature, threshold, left, right)) =
                    children_of.get(*node as usize).copied().flatten()
                {
                    let child = if self.data.row(row)[feature] <= threshold {
                        left
                    } else {
                        right
                    };
                    *node = child as u32;
                    totals[child].0 += residuals[row];
                    totals[child].1 += 1;
                }
            }
            open = next_open;
        }
        nodes
    }
}

/// Trains a boosted ensemble with `unknown` as the positive class.
pub fn train_gbdt(data: &LabeledDataset, params: &GbdtParams) -> Result<GbdtModel> {
    params.validate()?;
    data.require_both_classes()?;
    let n = data.len();
    let targets: Vec<f64> = data.labels().iter().map(|l| l.target()).collect();
    let positives = targets.iter().sum::<f64>();
    let base_score = (positives / (n as f64 - positives)).ln();

    let sorted: Vec<Vec<u32>> = (0..data.arity())
        .map(|j| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| data.row(a as usize)[j].total_cmp(&data.row(b as usize)[j]));
            idx
        })
        .collect();
    let builder = TreeBuilder {
        data,
        sorted: &sorted,
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let sample_size = ((n as f64 * params.subsample).round() as usize).clamp(1, n);
    let mut margins = vec![base_score; n];
    let mut loss = log_loss(&margins, &targets);
    let mut residuals = vec![0.0; n];
    let mut hessians = vec![0.0; n];
    let mut node_of = vec![0u32; n];
    let mut trees = Vec::with_capacity(params.trees);

    for _ in 0..params.trees {
        for i in 0..n {
            let p = logistic(margins[i]);
            residuals[i] = targets[i] - p;
            hessians[i] = p * (1.0 - p);
        }
        if sample_size < n {
            node_of.fill(UNASSIGNED);
            for i in index::sample(&mut rng, n, sample_size) {
                node_of[i] = 0;
            }
        } else {
            node_of.fill(0);
        }

        let mut nodes = builder.grow(&residuals, &mut node_of);
        let mut sums = vec![(0.0f64, 0.0f64); nodes.len()];
        for (i, &node) in node_of.iter().enumerate() {
            if node != UNASSIGNED {
                sums[node as usize].0 += residuals[i];
                sums[node as usize].1 += hessians[i];
            }
        }
        for (node, &(g, h)) in nodes.iter_mut().zip(&sums) {
            if let TreeNode::Leaf { value } = node {
                *value = if h > 0.0 {
                    (g / h).clamp(-MAX_LEAF_VALUE, MAX_LEAF_VALUE)
                } else {
                    0.0
                };
            }
        }
        let mut tree = Tree { nodes };

        // Leaf assignment for every row, sampled or not.
        let leaves: Vec<usize> = (0..n).map(|i| tree.leaf_index(data.row(i))).collect();
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate: Vec<f64> = (0..n)
                .map(|i| match tree.nodes[leaves[i]] {
                    TreeNode::Leaf { value } => margins[i] + params.learning_rate * value * scale,
                    TreeNode::Split { .. } => unreachable!(),
                })
                .collect();
            let new_loss = log_loss(&candidate, &targets);
            if new_loss <= loss {
                accepted = Some((candidate, new_loss));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((candidate, new_loss)) => {
                if scale != 1.0 {
                    for node in &mut tree.nodes {
                        if let TreeNode::Leaf { value } = node {
                            *value *= scale;
                        }
                    }
                }
                margins = candidate;
                loss = new_loss;
            }
            None => tree = Tree::leaf(0.0),
        }
        trees.push(tree);
    }

    Ok(GbdtModel {
        schema: data.schema,
        params: *params,
        base_score,
        learning_rate: params.learning_rate,
        trees,
    })
}

/// Training loss after each boosting round, for diagnostics.
pub fn loss_curve(model: &GbdtModel, data: &LabeledDataset) -> Vec<f64> {
    let targets: Vec<f64> = data.labels().iter().map(|l| l.target()).collect();
    let mut margins = vec![model.base_score; data.len()];
    let mut curve = vec![log_loss(&margins, &targets)];
    for tree in &model.trees {
        for (i, m) in margins.iter_mut().enumerate() {
            *m += model.learning_rate * tree.evaluate(data.row(i));
        }
        curve.push(log_loss(&margins, &targets));
    }
    curve
}
