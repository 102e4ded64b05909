//! Rule-based explanations of anomaly detector scores.
//!
//! A detector scores every training row (lower = more anomalous). To explain one instance,
//! a sample-weighted regression tree is fitted to the training scores with the instance
//! appended and up-weighted; the instance's decision path, simplified to one interval per
//! feature, is the explanation rule. Rules live in the original feature space, and the
//! rule's precision is estimated on a synthetic neighborhood scored by the same detector.
//!
//! ```
//! use dtor::detect::{IsolationForest, IsolationForestParams, Scorer, Threshold};
//! use dtor::explainer::{explain_instance, DtorConfig};
//!
//! let train: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 10) as f64, (i / 10) as f64]).collect();
//! let forest = IsolationForest::fit(&train, &IsolationForestParams::default(), 7).unwrap();
//! let scores = forest.score(&train).unwrap();
//! let th = Threshold::from_contamination(&scores, 0.05).unwrap();
//!
//! let x = vec![40.0, 3.0];
//! let y = forest.score(std::slice::from_ref(&x)).unwrap()[0];
//! let expl = explain_instance(&x, y, &train, &scores, &DtorConfig::default()).unwrap();
//! assert!(expl.rule.satisfies(&x).unwrap());
//! println!("outlier: {}, rule: {}", th.is_outlier(y), expl.rule);
//! ```

pub mod cli;
pub mod data;
pub mod detect;
pub mod eval;
pub mod explainer;
pub mod neighborhood;
pub mod rules;
pub mod tree;

pub use data::{Dataset, FeatureKind, FeatureMeta};
pub use detect::{DetectorModel, Scorer, Threshold};
pub use explainer::{explain_instance, DtorConfig, Explanation};
pub use rules::{Op, Predicate, Rule};
pub use tree::{RegressionTree, TreeParams};
