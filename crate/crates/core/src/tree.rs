//! Sample-weighted CART regression tree.
//!
//! Splits are chosen by exhaustive search over every feature and every midpoint between
//! consecutive distinct values. Split quality is the weighted impurity decrease
//!
//! ```text
//! (W_node / W_total) * [MSE_node - (W_L / W_node) MSE_L - (W_R / W_node) MSE_R]
//! ```
//!
//! with MSE the weighted mean squared deviation from the weighted mean. Rows with
//! `x[feature] <= threshold` go left, everything else goes right; the same convention is used
//! by prediction, path extraction and rule satisfaction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rules::Op;

/// Nodes whose weighted target variance is below this are not split further.
pub const PURE_VARIANCE: f64 = 1e-12;

/// Relative slack under which two impurity decreases count as tied. Ties keep the earlier
/// candidate in (feature, threshold) order.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("inputs disagree in length: {rows} rows, {targets} targets, {weights} weights")]
    Length {
        rows: usize,
        targets: usize,
        weights: usize,
    },
    #[error("cannot fit a tree on zero rows")]
    Empty,
    #[error("row {row} has {found} features, expected {expected}")]
    Width {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("sample weight at row {0} is not positive and finite")]
    Weight(usize),
    #[error("target at row {0} is not finite")]
    Target(usize),
    #[error("min_samples_leaf must be at least 1")]
    MinSamplesLeaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_impurity_decrease: f64,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 8,
            min_impurity_decrease: 1e-5,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
        weight: f64,
        n: usize,
    },
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
            TreeNode::Leaf { .. } => 0,
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Internal { left, right, .. } => left.n_leaves() + right.n_leaves(),
            TreeNode::Leaf { .. } => 1,
        }
    }
}

/// One step of a root-to-leaf path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub feature: usize,
    pub direction: Op,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub n_features: usize,
    pub root: TreeNode,
}

/// Weighted mean and weighted mean squared deviation.
pub fn weighted_moments(y: &[f64], w: &[f64]) -> Result<(f64, f64), TreeError> {
    if y.is_empty() {
        return Err(TreeError::Empty);
    }
    if y.len() != w.len() {
        return Err(TreeError::Length {
            rows: y.len(),
            targets: y.len(),
            weights: w.len(),
        });
    }
    Ok(moments_iter(y.iter().copied().zip(w.iter().copied())))
}

fn moments_iter(it: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64) {
    let (sw, swy) = it
        .clone()
        .fold((0.0, 0.0), |(sw, swy), (y, w)| (sw + w, swy + w * y));
    let mean = swy / sw;
    let mse = it.map(|(y, w)| w * (y - mean).powi(2)).sum::<f64>() / sw;
    (mean, mse)
}

struct Candidate {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    w: &'a [f64],
    params: &'a TreeParams,
    total_weight: f64,
    n_features: usize,
}

impl Builder<'_> {
    fn build(&self, idx: Vec<usize>, depth: usize) -> TreeNode {
        let (mean, mse) = moments_iter(idx.iter().map(|&i| (self.y[i], self.w[i])));
        let node_weight: f64 = idx.iter().map(|&i| self.w[i]).sum();
        let leaf = TreeNode::Leaf {
            value: mean,
            weight: node_weight,
            n: idx.len(),
        };
        if depth >= self.params.max_depth
            || mse < PURE_VARIANCE
            || idx.len() < 2 * self.params.min_samples_leaf
        {
            return leaf;
        }
        let best = match self.best_split(&idx, mean, node_weight) {
            Some(c) if c.decrease >= self.params.min_impurity_decrease => c,
            _ => return leaf,
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x[i][best.feature] <= best.threshold);
        TreeNode::Internal {
            feature: best.feature,
            threshold: best.threshold,
            left: Box::new(self.build(left, depth + 1)),
            right: Box::new(self.build(right, depth + 1)),
        }
    }

    /// Scans all (feature, midpoint) candidates in ascending order. With targets centered
    /// on the node mean, the decrease reduces to `S_L^2 * W / (W_L * W_R * W_total)` where
    /// `S_L` is the left sum of weighted centered targets.
    fn best_split(&self, idx: &[usize], mean: f64, node_weight: f64) -> Option<Candidate> {
        let msl = self.params.min_samples_leaf;
        let n = idx.len();
        let mut order = idx.to_vec();
        let mut best: Option<Candidate> = None;
        for f in 0..self.n_features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut wl = 0.0;
            let mut sl = 0.0;
            for pos in 0..n - 1 {
                let i = order[pos];
                wl += self.w[i];
                sl += self.w[i] * (self.y[i] - mean);
                let lo = self.x[i][f];
                let hi = self.x[order[pos + 1]][f];
                if lo == hi || pos + 1 < msl || n - pos - 1 < msl {
                    continue;
                }
                let wr = node_weight - wl;
                let decrease = sl * sl * node_weight / (wl * wr * self.total_weight);
                let improves = match &best {
                    None => true,
                    Some(b) => decrease > b.decrease + TIE_TOLERANCE * b.decrease.abs(),
                };
                if improves {
                    best = Some(Candidate {
                        feature: f,
                        threshold: midpoint(lo, hi),
                        decrease,
                    });
                }
            }
        }
        best
    }
}

/// Midpoint of two consecutive distinct values that still routes `lo` left and `hi` right.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let mut mid = (lo + hi) / 2.0;
    if !mid.is_finite() {
        mid = lo / 2.0 + hi / 2.0;
    }
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}

impl RegressionTree {
    pub fn fit(
        x: &[Vec<f64>],
        y: &[f64],
        w: &[f64],
        params: &TreeParams,
    ) -> Result<RegressionTree, TreeError> {
        if x.len() != y.len() || x.len() != w.len() {
            return Err(TreeError::Length {
                rows: x.len(),
                targets: y.len(),
                weights: w.len(),
            });
        }
        if x.is_empty() {
            return Err(TreeError::Empty);
        }
        if params.min_samples_leaf == 0 {
            return Err(TreeError::MinSamplesLeaf);
        }
        let d = x[0].len();
        if let Some(row) = x.iter().position(|r| r.len() != d) {
            return Err(TreeError::Width {
                row,
                expected: d,
                found: x[row].len(),
            });
        }
        if let Some(i) = w.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(TreeError::Weight(i));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(TreeError::Target(i));
        }
        let builder = Builder {
            x,
            y,
            w,
            params,
            total_weight: w.iter().sum(),
            n_features: d,
        };
        Ok(RegressionTree {
            n_features: d,
            root: builder.build((0..x.len()).collect(), 0),
        })
    }

    fn check_width(&self, x: &[f64]) -> Result<(), TreeError> {
        if x.len() != self.n_features {
            return Err(TreeError::Width {
                row: 0,
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Leaf reached by `x` together with the steps taken to get there.
    fn descend(&self, x: &[f64]) -> (&TreeNode, Vec<PathStep>) {
        let mut node = &self.root;
        let mut path = Vec::new();
        while let TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        } = node
        {
            let go_left = x[*feature] <= *threshold;
            path.push(PathStep {
                feature: *feature,
                direction: if go_left { Op::Le } else { Op::Gt },
                threshold: *threshold,
            });
            node = if go_left { left } else { right };
        }
        (node, path)
    }

    pub fn leaf(&self, x: &[f64]) -> Result<&TreeNode, TreeError> {
        self.check_width(x)?;
        Ok(self.descend(x).0)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, TreeError> {
        match self.leaf(x)? {
            TreeNode::Leaf { value, .. } => Ok(*value),
            TreeNode::Internal { .. } => unreachable!("descend always ends on a leaf"),
        }
    }

    pub fn decision_path(&self, x: &[f64]) -> Result<Vec<PathStep>, TreeError> {
        self.check_width(x)?;
        Ok(self.descend(x).1)
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn n_leaves(&self) -> usize {
        self.root.n_leaves()
    }
}

pub fn fit_tree(
    x: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    params: &TreeParams,
) -> Result<RegressionTree, TreeError> {
    RegressionTree::fit(x, y, w, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_tree() -> RegressionTree {
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        RegressionTree::fit(&x, &[0.0, 0.0, 10.0, 10.0], &[1.0; 4], &TreeParams::default()).unwrap()
    }

    #[test]
    fn constant_targets_give_single_leaf() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let t = RegressionTree::fit(&x, &[3.0; 3], &[1.0; 3], &TreeParams::default()).unwrap();
        assert_eq!(
            t.root,
            TreeNode::Leaf {
                value: 3.0,
                weight: 3.0,
                n: 3
            }
        );
        assert_eq!(t.predict(&[100.0]).unwrap(), 3.0);
        assert!(t.decision_path(&[100.0]).unwrap().is_empty());
    }

    #[test]
    fn step_function_splits_at_midpoint() {
        let t = step_tree();
        match &t.root {
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                assert_eq!((*feature, *threshold), (0, 1.5));
                assert!(matches!(**left, TreeNode::Leaf { value, .. } if value == 0.0));
                assert!(matches!(**right, TreeNode::Leaf { value, .. } if value == 10.0));
            }
            leaf => panic!("expected a split, got {leaf:?}"),
        }
        assert_eq!(t.predict(&[2.0]).unwrap(), 10.0);
        assert_eq!(
            t.decision_path(&[2.0]).unwrap(),
            vec![PathStep {
                feature: 0,
                direction: Op::Gt,
                threshold: 1.5
            }]
        );
    }

    #[test]
    fn value_at_threshold_routes_left() {
        let t = step_tree();
        assert_eq!(t.predict(&[1.5]).unwrap(), 0.0);
    }

    #[test]
    fn moments_examples() {
        assert_eq!(weighted_moments(&[1.0, 3.0], &[1.0, 1.0]).unwrap(), (2.0, 1.0));
        let (m, v) = weighted_moments(&[0.0, 10.0], &[9.0, 1.0]).unwrap();
        // second route: sum(w y^2)/sum(w) - mean^2
        let alt = (9.0 * 0.0 + 1.0 * 100.0) / 10.0 - m * m;
        assert!((m - 1.0).abs() < 1e-12);
        assert!((v - 9.0).abs() < 1e-12 && (v - alt).abs() < 1e-12);
        assert_eq!(
            weighted_moments(&[1.0, 5.0], &[2.0, 2.0]).unwrap(),
            weighted_moments(&[1.0, 1.0, 5.0, 5.0], &[1.0; 4]).unwrap()
        );
        assert_eq!(weighted_moments(&[], &[]), Err(TreeError::Empty));
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            RegressionTree::fit(&x, &[1.0], &[1.0, 1.0], &TreeParams::default()),
            Err(TreeError::Length { .. })
        ));
        assert_eq!(
            RegressionTree::fit(&x, &[1.0, 2.0], &[1.0, 0.0], &TreeParams::default()),
            Err(TreeError::Weight(1))
        );
        assert!(matches!(
            step_tree().predict(&[1.0, 2.0]),
            Err(TreeError::Width { .. })
        ));
        assert!(step_tree().decision_path(&[]).is_err());
    }

    #[test]
    fn min_samples_leaf_blocks_small_children() {
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let params = TreeParams {
            min_samples_leaf: 3,
            ..Default::default()
        };
        let t = RegressionTree::fit(&x, &[0.0, 0.0, 0.0, 10.0], &[1.0; 4], &params).unwrap();
        assert!(t.root.is_leaf());
    }

    #[test]
    fn adjacent_floats_keep_routing_consistent() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let t = midpoint(lo, hi);
        assert!(lo <= t && t < hi);
    }

    #[test]
    fn json_uses_nested_objects() {
        let json = serde_json::to_string(&step_tree().root).unwrap();
        assert_eq!(
            json,
            r#"{"feature":0,"threshold":1.5,"left":{"value":0.0,"weight":2.0,"n":2},"right":{"value":10.0,"weight":2.0,"n":2}}"#
        );
        let back: TreeNode = serde_json::from_str(&json).unwrap();
        assert_eq!(back, step_tree().root);
    }

    proptest::proptest! {
        #[test]
        fn paths_hold_and_end_at_prediction(
            rows in proptest::collection::vec(proptest::collection::vec(-5i32..5, 3), 1..40),
            seed in 0u64..1000,
        ) {
            let x: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64 * 0.5).collect()).collect();
            let y: Vec<f64> = x.iter().enumerate().map(|(i, r)| r[0] * r[1] + ((i as u64 * 31 + seed) % 7) as f64).collect();
            let w: Vec<f64> = (0..x.len()).map(|i| 1.0 + ((i as u64 + seed) % 3) as f64).collect();
            let params = TreeParams { max_depth: 4, ..Default::default() };
            let t = RegressionTree::fit(&x, &y, &w, &params).unwrap();
            proptest::prop_assert!(t.depth() <= 4);
            for r in &x {
                let path = t.decision_path(r).unwrap();
                proptest::prop_assert!(path.len() <= 4);
                for s in &path {
                    let holds = match s.direction { Op::Le => r[s.feature] <= s.threshold, Op::Gt => r[s.feature] > s.threshold };
                    proptest::prop_assert!(holds);
                }
                let leaf_value = match t.leaf(r).unwrap() { TreeNode::Leaf { value, .. } => *value, _ => unreachable!() };
                proptest::prop_assert_eq!(t.predict(r).unwrap(), leaf_value);
            }
        }
    }
}
