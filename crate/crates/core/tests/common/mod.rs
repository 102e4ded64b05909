//! Shared test helpers: a brute-force CART reference and random instance generators.

#![allow(dead_code, clippy::needless_range_loop)]

use dtor::tree::{TreeNode, TreeParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const TIE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum RefNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<RefNode>,
        right: Box<RefNode>,
    },
    Leaf {
        value: f64,
        weight: f64,
        n: usize,
    },
}

fn mean_and_sse(idx: &[usize], y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let mut sw = 0.0;
    let mut swy = 0.0;
    for &i in idx {
        sw += w[i];
        swy += w[i] * y[i];
    }
    let mean = swy / sw;
    let sse: f64 = idx.iter().map(|&i| w[i] * (y[i] - mean) * (y[i] - mean)).sum();
    (mean, sse, sw)
}

/// Greedy CART where every node tries every (feature, midpoint) pair and recomputes the
/// child impurities from scratch.
pub fn reference_tree(x: &[Vec<f64>], y: &[f64], w: &[f64], p: &TreeParams) -> RefNode {
    let total: f64 = w.iter().sum();
    grow(x, y, w, p, total, (0..x.len()).collect(), 0)
}

fn grow(
    x: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    p: &TreeParams,
    total: f64,
    idx: Vec<usize>,
    depth: usize,
) -> RefNode {
    let (mean, sse, sw) = mean_and_sse(&idx, y, w);
    let leaf = RefNode::Leaf {
        value: mean,
        weight: sw,
        n: idx.len(),
    };
    if depth >= p.max_depth || sse / sw < 1e-12 || idx.len() < 2 * p.min_samples_leaf {
        return leaf;
    }
    let d = x[0].len();
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..d {
        let mut vals: Vec<f64> = idx.iter().map(|&i| x[i][f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for pair in vals.windows(2) {
            let mut th = (pair[0] + pair[1]) / 2.0;
            if !(th >= pair[0] && th < pair[1]) {
                th = pair[0];
            }
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][f] <= th);
            if l.len() < p.min_samples_leaf || r.len() < p.min_samples_leaf {
                continue;
            }
            let (_, sse_l, _) = mean_and_sse(&l, y, w);
            let (_, sse_r, _) = mean_and_sse(&r, y, w);
            let dec = (sse - sse_l - sse_r) / total;
            let better = match best {
                None => true,
                Some((_, _, b)) => dec > b + TIE * b.abs(),
            };
            if better {
                best = Some((f, th, dec));
            }
        }
    }
    match best {
        Some((f, th, dec)) if dec >= p.min_impurity_decrease => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][f] <= th);
            RefNode::Split {
                feature: f,
                threshold: th,
                left: Box::new(grow(x, y, w, p, total, l, depth + 1)),
                right: Box::new(grow(x, y, w, p, total, r, depth + 1)),
            }
        }
        _ => leaf,
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Same structure, features and thresholds; leaf values equal up to summation rounding.
pub fn same_as_reference(node: &TreeNode, reference: &RefNode, check_counts: bool) -> bool {
    match (node, reference) {
        (
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            },
            RefNode::Split {
                feature: rf,
                threshold: rt,
                left: rl,
                right: rr,
            },
        ) => {
            feature == rf
                && threshold == rt
                && same_as_reference(left, rl, check_counts)
                && same_as_reference(right, rr, check_counts)
        }
        (
            TreeNode::Leaf { value, weight, n },
            RefNode::Leaf {
                value: rv,
                weight: rw,
                n: rn,
            },
        ) => close(*value, *rv) && close(*weight, *rw) && (!check_counts || n == rn),
        _ => false,
    }
}

/// Structural equality between two fitted trees, with leaf values compared up to rounding.
pub fn same_tree(a: &TreeNode, b: &TreeNode) -> bool {
    match (a, b) {
        (
            TreeNode::Internal {
                feature: fa,
                threshold: ta,
                left: la,
                right: ra,
            },
            TreeNode::Internal {
                feature: fb,
                threshold: tb,
                left: lb,
                right: rb,
            },
        ) => fa == fb && ta == tb && same_tree(la, lb) && same_tree(ra, rb),
        (TreeNode::Leaf { value: va, .. }, TreeNode::Leaf { value: vb, .. }) => close(*va, *vb),
        _ => false,
    }
}

/// Small random regression instance. Half of the instances draw features from a coarse
/// integer grid so that duplicates and tied splits occur.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max_n: usize,
    max_d: usize,
) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let n = rng.gen_range(1..=max_n);
    let d = rng.gen_range(1..=max_d);
    let coarse = rng.gen_bool(0.5);
    let x = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    if coarse {
                        rng.gen_range(0..4) as f64
                    } else {
                        rng.gen_range(-5.0..5.0)
                    }
                })
                .collect()
        })
        .collect();
    let y = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
    (x, y, w)
}

/// Two Gaussian blobs of `n - n_out` points plus `n_out` uniform points far from both.
/// Returns the rows and the indices of the planted points.
pub fn two_blobs_with_outliers(rng: &mut ChaCha8Rng, n: usize, n_out: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rows = Vec::with_capacity(n);
    for i in 0..n - n_out {
        let c = if i % 2 == 0 { -3.0 } else { 3.0 };
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        rows.push(vec![c + 0.5 * a, c + 0.5 * b]);
    }
    let mut planted = Vec::with_capacity(n_out);
    while planted.len() < n_out {
        let p = vec![rng.gen_range(-12.0..12.0), rng.gen_range(-12.0..12.0)];
        let far = [-3.0f64, 3.0]
            .iter()
            .all(|c| ((p[0] - c).powi(2) + (p[1] - c).powi(2)).sqrt() > 5.0);
        if far {
            planted.push(rows.len());
            rows.push(p);
        }
    }
    (rows, planted)
}

use dtor::detect::{DetectError, Scorer};
use dtor::rules::{Predicate, Rule};

/// Ground-truth detector: score -1 when feature 0 exceeds `c`, else 0.
pub struct BoxDetector {
    pub c: f64,
}

impl Scorer for BoxDetector {
    fn score(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, DetectError> {
        Ok(rows.iter().map(|r| if r[0] > self.c { -1.0 } else { 0.0 }).collect())
    }
}

/// Score is minus the sum of the features.
pub struct SumDetector;

impl Scorer for SumDetector {
    fn score(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, DetectError> {
        Ok(rows.iter().map(|r| -r.iter().sum::<f64>()).collect())
    }
}

/// Random conjunction of up to `max_len` predicates over `d` features, not simplified.
pub fn random_rule(rng: &mut ChaCha8Rng, d: usize, max_len: usize) -> Rule {
    let len = rng.gen_range(0..=max_len);
    Rule::new(
        (0..len)
            .map(|_| {
                let f = rng.gen_range(0..d);
                let th = rng.gen_range(-3.0..3.0);
                if rng.gen_bool(0.5) {
                    Predicate::le(f, th)
                } else {
                    Predicate::gt(f, th)
                }
            })
            .collect(),
    )
}

/// Random rule that `x` satisfies: every threshold is placed on the side of `x` that keeps
/// the predicate true.
pub fn random_rule_around(rng: &mut ChaCha8Rng, x: &[f64], max_len: usize) -> Rule {
    let len = rng.gen_range(0..=max_len);
    Rule::new(
        (0..len)
            .map(|_| {
                let f = rng.gen_range(0..x.len());
                let gap = rng.gen_range(0.0..2.0);
                if rng.gen_bool(0.5) {
                    Predicate::le(f, x[f] + gap)
                } else {
                    Predicate::gt(f, x[f] - gap - 1e-9)
                }
            })
            .collect(),
    )
}
