//! Least-squares regression trees for the boosting rounds.
//!
//! Split search is exact greedy over sorted feature values: candidate
//! thresholds are the distinct values themselves (a sample goes left when
//! `x <= threshold`), so splits depend only on value order and survive any
//! positive rescaling of a feature column. Ties are resolved by
//! (gain, feature index, threshold) to keep training deterministic.

use serde::{Deserialize, Serialize};

/// Leaf values are clipped to this magnitude so pure leaves cannot produce
/// infinite log-odds.
pub const LEAF_VALUE_CLIP: f64 = 4.0;

const MIN_GAIN: f64 = 1e-12;
const MIN_HESSIAN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if features[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Predict for row `row` of column-major data.
    pub fn predict_from_columns(&self, columns: &[Vec<f64>], row: usize) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if columns[*feature][row] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn max_feature_index(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split { feature, left, right, .. } => {
                let mut max = *feature;
                if let Some(m) = left.max_feature_index() {
                    max = max.max(m);
                }
                if let Some(m) = right.max_feature_index() {
                    max = max.max(m);
                }
                Some(max)
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.num_leaves() + right.num_leaves(),
        }
    }
}

/// Newton leaf value for logistic loss: sum of residuals over sum of
/// hessians, clipped.
fn leaf_value(indices: &[usize], residuals: &[f64], hessians: &[f64]) -> TreeNode {
    let grad: f64 = indices.iter().map(|&i| residuals[i]).sum();
    let hess: f64 = indices.iter().map(|&i| hessians[i]).sum();
    let value = (grad / hess.max(MIN_HESSIAN)).clamp(-LEAF_VALUE_CLIP, LEAF_VALUE_CLIP);
    TreeNode::Leaf { value }
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn find_best_split(
    columns: &[Vec<f64>],
    residuals: &[f64],
    indices: &[usize],
    min_samples_leaf: usize,
) -> Option<BestSplit> {
    let n = indices.len();
    if n < 2 * min_samples_leaf {
        return None;
    }
    let total_sum: f64 = indices.iter().map(|&i| residuals[i]).sum();
    let total_score = total_sum * total_sum / n as f64;
    let mut best: Option<BestSplit> = None;
    let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(n);
    for (feature, column) in columns.iter().enumerate() {
        sorted.clear();
        sorted.extend(indices.iter().map(|&i| (column[i], residuals[i])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_sum = 0.0f64;
        for pos in 1..n {
            left_sum += sorted[pos - 1].1;
            // Candidate thresholds sit between distinct values only.
            if sorted[pos - 1].0 == sorted[pos].0 {
                continue;
            }
            let n_left = pos;
            let n_right = n - pos;
            if n_left < min_samples_leaf || n_right < min_samples_leaf {
                continue;
            }
            let right_sum = total_sum - left_sum;
            let gain = left_sum * left_sum / n_left as f64
                + right_sum * right_sum / n_right as f64
                - total_score;
            let threshold = sorted[pos - 1].0;
            let better = match &best {
                None => gain > MIN_GAIN,
                Some(b) => {
                    gain > b.gain
                        || (gain == b.gain
                            && (feature < b.feature
                                || (feature == b.feature && threshold < b.threshold)))
                }
            };
            if better && gain > MIN_GAIN {
                best = Some(BestSplit { gain, feature, threshold });
            }
        }
    }
    best
}

fn build_node(
    columns: &[Vec<f64>],
    residuals: &[f64],
    hessians: &[f64],
    indices: &[usize],
    depth: usize,
    max_depth: usize,
    min_samples_leaf: usize,
) -> TreeNode {
    if depth >= max_depth {
        return leaf_value(indices, residuals, hessians);
    }
    let Some(split) = find_best_split(columns, residuals, indices, min_samples_leaf) else {
        return leaf_value(indices, residuals, hessians);
    };
    let column = &columns[split.feature];
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
        indices.iter().partition(|&&i| column[i] <= split.threshold);
    let left = build_node(
        columns,
        residuals,
        hessians,
        &left_idx,
        depth + 1,
        max_depth,
        min_samples_leaf,
    );
    let right = build_node(
        columns,
        residuals,
        hessians,
        &right_idx,
        depth + 1,
        max_depth,
        min_samples_leaf,
    );
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// Fits one regression tree to the residuals by exact greedy least-squares
/// splitting; leaf values take the Newton step for logistic loss.
pub fn fit_regression_tree(
    columns: &[Vec<f64>],
    residuals: &[f64],
    hessians: &[f64],
    indices: &[usize],
    max_depth: usize,
    min_samples_leaf: usize,
) -> TreeNode {
    build_node(columns, residuals, hessians, indices, 0, max_depth, min_samples_leaf)
}
