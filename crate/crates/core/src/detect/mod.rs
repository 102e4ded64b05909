//! Anomaly scorers sharing one convention: lower score = more anomalous.
//!
//! The isolation forest exposes `-s` for its normalized score `s ∈ [0, 1]`, the GMM exposes
//! the log-density of the standardized row, and the external adapter forwards whatever a
//! subprocess prints. A row is an outlier when its score is strictly below the threshold.

mod external;
mod gmm;
mod iforest;

pub use external::ExternalScorer;
pub use gmm::{Gmm, GmmParams, GmmTrace};
pub use iforest::{average_path_length, IsolationForest, IsolationForestParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("row {row} has {found} features, model expects {expected}")]
    Width {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("GMM needs at least k = {k} training rows, got {n}")]
    TooFewRows { k: usize, n: usize },
    #[error("invalid detector parameter: {0}")]
    Param(String),
    #[error("contamination must lie in (0, 1), got {0}")]
    Contamination(f64),
    #[error("no training scores to threshold")]
    NoScores,
    #[error("external scorer failed: {0}")]
    External(String),
}

/// Anything that maps rows to anomaly scores (lower = more anomalous).
pub trait Scorer {
    fn score(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, DetectError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, DetectError> {
        (**self).score(rows)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DetectorModel {
    IsolationForest(IsolationForest),
    Gmm(Gmm),
    External(ExternalScorer),
}

impl DetectorModel {
    pub fn kind(&self) -> &'static str {
        match self {
            DetectorModel::IsolationForest(_) => "iforest",
            DetectorModel::Gmm(_) => "gmm",
            DetectorModel::External(_) => "external",
        }
    }

    pub fn n_features(&self) -> Option<usize> {
        match self {
            DetectorModel::IsolationForest(m) => Some(m.n_features()),
            DetectorModel::Gmm(m) => Some(m.n_features()),
            DetectorModel::External(m) => m.n_features,
        }
    }
}

impl Scorer for DetectorModel {
    fn score(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, DetectError> {
        match self {
            DetectorModel::IsolationForest(m) => m.score(rows),
            DetectorModel::Gmm(m) => m.score(rows),
            DetectorModel::External(m) => m.score(rows),
        }
    }
}

pub fn fit_isolation_forest(
    train: &Dataset,
    params: &IsolationForestParams,
    seed: u64,
) -> Result<DetectorModel, DetectError> {
    IsolationForest::fit(train.rows(), params, seed).map(DetectorModel::IsolationForest)
}

pub fn fit_gmm(train: &Dataset, params: &GmmParams, seed: u64) -> Result<DetectorModel, DetectError> {
    Gmm::fit(train, params, seed).map(DetectorModel::Gmm)
}

pub(crate) fn check_width(rows: &[Vec<f64>], d: usize) -> Result<(), DetectError> {
    match rows.iter().position(|r| r.len() != d) {
        Some(i) => Err(DetectError::Width {
            row: i,
            expected: d,
            found: rows[i].len(),
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub t: f64,
    pub contamination: f64,
}

impl Threshold {
    /// `t` is the lower-interpolated `contamination` quantile of the training scores, i.e.
    /// the order statistic at index `floor(contamination * (N - 1))`. At most
    /// `contamination * N` training scores lie strictly below it.
    pub fn from_contamination(train_scores: &[f64], contamination: f64) -> Result<Self, DetectError> {
        if !(contamination > 0.0 && contamination < 1.0) {
            return Err(DetectError::Contamination(contamination));
        }
        if train_scores.is_empty() {
            return Err(DetectError::NoScores);
        }
        let mut sorted = train_scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let k = (contamination * (sorted.len() - 1) as f64).floor() as usize;
        Ok(Threshold {
            t: sorted[k],
            contamination,
        })
    }

    pub fn is_outlier(&self, score: f64) -> bool {
        score < self.t
    }
}

pub fn threshold_from_contamination(
    train_scores: &[f64],
    contamination: f64,
) -> Result<Threshold, DetectError> {
    Threshold::from_contamination(train_scores, contamination)
}

pub fn is_outlier(score: f64, th: &Threshold) -> bool {
    th.is_outlier(score)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_on_integer_grid() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        let th = Threshold::from_contamination(&scores, 0.05).unwrap();
        assert_eq!(th.t, 5.0);
        assert_eq!(scores.iter().filter(|&&s| th.is_outlier(s)).count(), 4);
    }

    #[test]
    fn all_equal_scores_flag_nothing() {
        let th = Threshold::from_contamination(&[0.3; 17], 0.05).unwrap();
        assert_eq!(th.t, 0.3);
        assert!(!th.is_outlier(0.3));
    }

    #[test]
    fn separated_planted_outliers_are_exactly_flagged() {
        // 10 of 200 planted far below the inliers (5%)
        let mut scores: Vec<f64> = (0..190).map(|i| i as f64 * 0.01).collect();
        let planted: Vec<f64> = (0..10).map(|i| -100.0 - i as f64).collect();
        scores.extend(&planted);
        // floor(c * 199) = 10 puts t on the smallest inlier
        let th = Threshold::from_contamination(&scores, 10.0 / 199.0 + 1e-9).unwrap();
        let flagged: Vec<f64> = scores.iter().copied().filter(|&s| th.is_outlier(s)).collect();
        let mut expected = planted.clone();
        expected.sort_by(f64::total_cmp);
        let mut flagged_sorted = flagged;
        flagged_sorted.sort_by(f64::total_cmp);
        assert_eq!(flagged_sorted, expected);
    }

    #[test]
    fn outlier_test_is_strict() {
        let th = Threshold {
            t: 0.25,
            contamination: 0.05,
        };
        assert!(!is_outlier(0.25, &th));
        assert!(is_outlier(0.25 - 1e-12, &th));
    }

    #[test]
    fn rejects_bad_contamination() {
        assert!(Threshold::from_contamination(&[1.0], 0.0).is_err());
        assert!(Threshold::from_contamination(&[1.0], 1.0).is_err());
        assert!(Threshold::from_contamination(&[], 0.1).is_err());
    }

    proptest::proptest! {
        #[test]
        fn fraction_below_threshold_is_bounded(
            scores in proptest::collection::vec(-5.0f64..5.0, 1..400),
            c in 0.01f64..0.5,
        ) {
            let th = Threshold::from_contamination(&scores, c).unwrap();
            let n = scores.len() as f64;
            let below = scores.iter().filter(|&&s| s < th.t).count() as f64;
            let at_or_below = scores.iter().filter(|&&s| s <= th.t).count() as f64;
            proptest::prop_assert!(below / n <= c);
            proptest::prop_assert!(at_or_below / n >= c - 1.0 / n);
        }
    }
}
