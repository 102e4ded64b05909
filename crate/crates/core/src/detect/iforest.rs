use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_width, DetectError, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestParams {
    pub n_trees: usize,
    pub subsample: usize,
}

impl Default for IsolationForestParams {
    fn default() -> Self {
        IsolationForestParams {
            n_trees: 100,
            subsample: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum INode {
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

/// One isolation tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    nodes: Vec<INode>,
}

impl IsolationTree {
    fn grow(rows: &[Vec<f64>], sample: Vec<usize>, max_depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut tree = IsolationTree { nodes: Vec::new() };
        tree.grow_node(rows, sample, 0, max_depth, rng);
        tree
    }

    fn grow_node(
        &mut self,
        rows: &[Vec<f64>],
        idx: Vec<usize>,
        depth: usize,
        max_depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(INode::Leaf { size: idx.len() });
        if idx.len() <= 1 || depth >= max_depth {
            return id;
        }
        // only features that vary inside the node can isolate anything
        let d = rows[idx[0]].len();
        let ranges: Vec<(usize, f64, f64)> = (0..d)
            .filter_map(|j| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(rows[i][j]), hi.max(rows[i][j]))
                });
                (hi > lo).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.gen_range(0..ranges.len())];
        let value = rng.gen_range(lo..hi);
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| rows[i][feature] < value);
        let left = self.grow_node(rows, left_idx, depth + 1, max_depth, rng);
        let right = self.grow_node(rows, right_idx, depth + 1, max_depth, rng);
        self.nodes[id] = INode::Split {
            feature,
            value,
            left,
            right,
        };
        id
    }

    /// Depth of the reached leaf plus the expected remaining path length of its sample.
    fn path_length(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        let mut depth = 0usize;
        loop {
            match self.nodes[id] {
                INode::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    id = if x[feature] < value { left } else { right };
                    depth += 1;
                }
                INode::Leaf { size } => return depth as f64 + average_path_length(size),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[INode], id: usize) -> usize {
            match nodes[id] {
                INode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                INode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Average path length of an unsuccessful BST search over `n` points:
/// `c(n) = 2 H(n-1) - 2 (n-1) / n`, with `c(n) = 0` for `n <= 1`.
/// `H` is the exact harmonic number.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let harmonic: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
    2.0 * harmonic - 2.0 * (n - 1) as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    trees: Vec<IsolationTree>,
    subsample_size: usize,
    normalizer: f64,
    n_features: usize,
}

impl IsolationForest {
    pub fn fit(
        rows: &[Vec<f64>],
        params: &IsolationForestParams,
        seed: u64,
    ) -> Result<Self, DetectError> {
        if rows.is_empty() {
            return Err(DetectError::Param("isolation forest needs training rows".into()));
        }
        if params.n_trees == 0 || params.subsample == 0 {
            return Err(DetectError::Param("n_trees and subsample must be positive".into()));
        }
        let n_features = rows[0].len();
        check_width(rows, n_features)?;
        let psi = params.subsample.min(rows.len());
        let max_depth = (psi as f64).log2().ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..params.n_trees)
            .map(|_| {
                let idx = sample(&mut rng, rows.len(), psi).into_vec();
                IsolationTree::grow(rows, idx, max_depth, &mut rng)
            })
            .collect();
        Ok(IsolationForest {
            trees,
            subsample_size: psi,
            normalizer: average_path_length(psi),
            n_features,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn trees(&self) -> &[IsolationTree] {
        &self.trees
    }

    pub fn subsample_size(&self) -> usize {
        self.subsample_size
    }

    /// Normalized anomaly score `s = 2^(-E[h(x)] / c(psi))` in `(0, 1]`; higher = more anomalous.
    pub fn normalized_score(&self, x: &[f64]) -> f64 {
        if self.normalizer <= 0.0 {
            return 1.0;
        }
        let mean_path =
            self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64;
        2f64.powf(-mean_path / self.normalizer)
    }
}

impl Scorer for IsolationForest {
    fn score(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, DetectError> {
        check_width(rows, self.n_features)?;
        Ok(rows.iter().map(|r| -self.normalized_score(r)).collect())
    }
}
