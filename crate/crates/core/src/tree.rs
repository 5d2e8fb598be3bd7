//! Depth-limited CART regression tree (squared error, best split over all
//! features), used as an interpretability baseline.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::bann::format_number;
use crate::dataset::Dataset;
use crate::error::ModelError;

/// Relative gain below which a split is not considered an improvement.
const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        prediction: f64,
        count: usize,
    },
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Recorded for reproducibility; the fit itself is deterministic.
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { max_depth: 3, min_samples_leaf: 1, seed: 0 }
    }
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Internal { feature, left, right, .. } => {
                [Some(*feature), left.max_feature(), right.max_feature()].into_iter().flatten().max()
            }
        }
    }
}

fn mean(labels: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| labels[i]).sum::<f64>() / idx.len() as f64
}

fn sse(labels: &[f64], idx: &[usize]) -> f64 {
    let mu = mean(labels, idx);
    idx.iter().map(|&i| (labels[i] - mu).powi(2)).sum()
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn best_split(x: ArrayView2<f64>, y: &[f64], idx: &[usize], min_leaf: usize) -> Option<Split> {
    let n = idx.len();
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let parent = sse(y, idx);
    let mut best: Option<Split> = None;
    let mut order = idx.to_vec();
    for j in 0..x.ncols() {
        order.sort_by(|&a, &b| x[[a, j]].total_cmp(&x[[b, j]]).then(a.cmp(&b)));
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += y[order[k]];
            let (lo, hi) = (x[[order[k], j]], x[[order[k + 1], j]]);
            let nl = k + 1;
            let nr = n - nl;
            if lo == hi || nl < min_leaf || nr < min_leaf {
                continue;
            }
            // minimizing child SSE is maximizing Σ²/n over the two sides
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - total * total / n as f64;
            if best.as_ref().is_none_or(|b| score > b.gain) {
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                best = Some(Split { feature: j, threshold, gain: score });
            }
        }
    }
    best.filter(|b| b.gain > GAIN_EPS * parent.max(f64::MIN_POSITIVE))
        .and_then(|b| {
            // confirm the strict reduction with exactly computed child SSEs
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[[i, b.feature]] <= b.threshold);
            (sse(y, &l) + sse(y, &r) < parent).then_some(b)
        })
}

fn grow(x: ArrayView2<f64>, y: &[f64], idx: &[usize], depth: usize, cfg: &TreeConfig) -> TreeNode {
    let leaf = || TreeNode::Leaf { prediction: mean(y, idx), count: idx.len() };
    if depth >= cfg.max_depth || idx.len() < 2 * cfg.min_samples_leaf.max(1) {
        return leaf();
    }
    match best_split(x, y, idx, cfg.min_samples_leaf.max(1)) {
        None => leaf(),
        Some(s) => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[[i, s.feature]] <= s.threshold);
            TreeNode::Internal {
                feature: s.feature,
                threshold: s.threshold,
                left: Box::new(grow(x, y, &l, depth + 1, cfg)),
                right: Box::new(grow(x, y, &r, depth + 1, cfg)),
            }
        }
    }
}

/// Fits on `train.features` as given (no standardization is applied).
pub fn fit_tree(train: &Dataset, config: &TreeConfig) -> Result<TreeNode, ModelError> {
    if config.max_depth == 0 {
        return Err(ModelError::Invalid("tree max_depth must be at least 1".into()));
    }
    if train.is_empty() {
        return Err(ModelError::Invalid("cannot fit a tree on zero examples".into()));
    }
    let idx: Vec<usize> = (0..train.len()).collect();
    Ok(grow(train.features.view(), &train.labels, &idx, 0, config))
}

pub fn predict_tree(tree: &TreeNode, x: &[f64]) -> Result<f64, ModelError> {
    if let Some(j) = tree.max_feature() {
        if j >= x.len() {
            return Err(ModelError::DimensionMismatch { expected: j + 1, found: x.len() });
        }
    }
    let mut node = tree;
    loop {
        match node {
            TreeNode::Leaf { prediction, .. } => return Ok(*prediction),
            TreeNode::Internal { feature, threshold, left, right } => {
                node = if x[*feature] <= *threshold { left } else { right };
            }
        }
    }
}

pub fn tree_mse(tree: &TreeNode, data: &Dataset) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let row = data.row(i);
        total += (predict_tree(tree, &row)? - data.labels[i]).powi(2);
    }
    Ok(total / data.len() as f64)
}

/// Indented text rendering, `≤` branch first.
pub fn render_tree(tree: &TreeNode, feature_names: &[String]) -> String {
    fn walk(node: &TreeNode, names: &[String], indent: usize, out: &mut String) {
        let pad = "|   ".repeat(indent);
        match node {
            TreeNode::Leaf { prediction, count } => {
                let _ = writeln!(out, "{pad}value: {} (n={count})", format_number(*prediction, Some(6)));
            }
            TreeNode::Internal { feature, threshold, left, right } => {
                let name = names.get(*feature).cloned().unwrap_or_else(|| format!("x{feature}"));
                let t = format_number(*threshold, Some(6));
                let _ = writeln!(out, "{pad}{name} <= {t}");
                walk(left, names, indent + 1, out);
                let _ = writeln!(out, "{pad}{name} > {t}");
                walk(right, names, indent + 1, out);
            }
        }
    }
    let mut out = String::new();
    walk(tree, feature_names, 0, &mut out);
    out
}
