//! Single-instance explanation: fit a weighted regression tree on the training rows plus the
//! instance, then read the instance's decision path as a rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rules::{Rule, RuleError};
use crate::tree::{RegressionTree, TreeError, TreeNode, TreeParams};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("{0} training rows but {1} training scores")]
    Length(usize, usize),
    #[error("no training rows")]
    Empty,
    #[error("instance has {found} features, training rows have {expected}")]
    Width { expected: usize, found: usize },
    #[error("beta_factor must be positive and finite, got {0}")]
    BetaFactor(f64),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtorConfig {
    /// The explained instance is weighted `beta_factor * N`; training rows weigh 1.
    pub beta_factor: f64,
    pub tree: TreeParams,
}

impl Default for DtorConfig {
    fn default() -> Self {
        DtorConfig {
            beta_factor: 0.1,
            tree: TreeParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Explanation {
    /// Simplified decision path of the instance, carrying the leaf's predicted score.
    pub rule: Rule,
    pub tree: RegressionTree,
}

/// Explains `(x_expl, y_expl)` against `(x_train, y_train)`.
///
/// The instance is always appended, even if an identical row is already in the training
/// set. Its score must come from the same detector that scored the training rows.
pub fn explain_instance(
    x_expl: &[f64],
    y_expl: f64,
    x_train: &[Vec<f64>],
    y_train: &[f64],
    cfg: &DtorConfig,
) -> Result<Explanation, ExplainError> {
    let n = x_train.len();
    if n != y_train.len() {
        return Err(ExplainError::Length(n, y_train.len()));
    }
    if n == 0 {
        return Err(ExplainError::Empty);
    }
    let d = x_train[0].len();
    if x_expl.len() != d {
        return Err(ExplainError::Width {
            expected: d,
            found: x_expl.len(),
        });
    }
    if !(cfg.beta_factor > 0.0 && cfg.beta_factor.is_finite()) {
        return Err(ExplainError::BetaFactor(cfg.beta_factor));
    }

    let mut x = x_train.to_vec();
    x.push(x_expl.to_vec());
    let mut y = y_train.to_vec();
    y.push(y_expl);
    let mut w = vec![1.0; n];
    w.push(cfg.beta_factor * n as f64);

    let tree = RegressionTree::fit(&x, &y, &w, &cfg.tree)?;
    let path = tree.decision_path(x_expl)?;
    let leaf_value = match tree.leaf(x_expl)? {
        TreeNode::Leaf { value, .. } => *value,
        TreeNode::Internal { .. } => unreachable!("leaf() always returns a leaf"),
    };
    let rule = Rule::from_path(&path, Some(leaf_value)).simplify()?;
    debug_assert!(rule.satisfies(x_expl).unwrap_or(false));
    Ok(Explanation { rule, tree })
}
