//! Synthetic neighborhoods of a rule and the rule's precision against a detector.
//!
//! Base rows are real rows ranked by how many of the rule's per-feature sub-rules they
//! already satisfy. The rule's feature columns are then overwritten with draws from a
//! per-feature value grid built from the rows that satisfy that feature's sub-rule. Columns
//! the rule does not mention keep the base row's values, so their dependence on the rule
//! features is partially preserved.
//!
//! Grids keep duplicate entries (for instance when mean and median coincide), which makes
//! those values proportionally more likely to be drawn.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::FeatureMeta;
use crate::detect::{DetectError, Scorer, Threshold};
use crate::rules::{Rule, RuleError};

pub const DEFAULT_N_GEN: usize = 1000;

#[derive(Debug, Error)]
pub enum NeighborhoodError {
    #[error("no row satisfies the sub-rule on feature {0}")]
    EmptyCondition(usize),
    #[error("value grid has no entry for rule feature {0}")]
    MissingGrid(usize),
    #[error("number of synthetic rows must be at least 1")]
    NGen,
    #[error("reference matrix is empty")]
    NoRows,
    #[error("row {row} has {found} features, expected {expected}")]
    Width {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("detector returned {found} scores for {expected} rows")]
    ScoreCount { expected: usize, found: usize },
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("writing synthetic rows: {0}")]
    Io(#[from] std::io::Error),
}

/// Admissible values per rule feature.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    pub values: BTreeMap<usize, Vec<f64>>,
}

impl ValueGrid {
    pub fn get(&self, feature: usize) -> Option<&[f64]> {
        self.values.get(&feature).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSet {
    pub rows: Vec<Vec<f64>>,
    /// Index into the reference matrix of the base row of each synthetic row.
    pub provenance: Vec<usize>,
}

/// Linear interpolation between order statistics; `sorted` must be non-empty and ascending.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let v = sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64);
    v.clamp(sorted[lo], sorted[hi])
}

/// Builds the value grid of every feature the rule constrains. `x` must contain the
/// explained instance, which guarantees each conditioned subset is non-empty.
///
/// Numeric features get `[min, q1/4, median, mean, q3/4, max]` of the conditioned subset;
/// categorical features get its distinct codes, ascending.
pub fn build_value_grid(
    x: &[Vec<f64>],
    rule: &Rule,
    meta: &[FeatureMeta],
) -> Result<ValueGrid, NeighborhoodError> {
    let mut values = BTreeMap::new();
    for (feature, interval) in rule.intervals() {
        let mut cond: Vec<f64> = x
            .iter()
            .map(|r| r[feature])
            .filter(|&v| interval.contains(v))
            .collect();
        if cond.is_empty() {
            return Err(NeighborhoodError::EmptyCondition(feature));
        }
        cond.sort_by(f64::total_cmp);
        let categorical = meta.get(feature).is_some_and(FeatureMeta::is_categorical);
        let grid = if categorical {
            cond.dedup();
            cond
        } else {
            let (min, max) = (cond[0], cond[cond.len() - 1]);
            let mean = (cond.iter().sum::<f64>() / cond.len() as f64).clamp(min, max);
            vec![
                min,
                quantile_linear(&cond, 0.25),
                quantile_linear(&cond, 0.5),
                mean,
                quantile_linear(&cond, 0.75),
                max,
            ]
        };
        values.insert(feature, grid);
    }
    Ok(ValueGrid { values })
}

/// Orders row indices for use as base rows. Rows satisfying at least one per-feature
/// sub-rule come first, by descending number of satisfied sub-rules and then ascending
/// index; the remaining rows follow in a seeded random order.
pub fn rank_candidates(x: &[Vec<f64>], rule: &Rule, seed: u64) -> Vec<usize> {
    let intervals = rule.intervals();
    let mut matched: Vec<(usize, usize)> = Vec::new();
    let mut rest = Vec::new();
    for (i, row) in x.iter().enumerate() {
        let hits = intervals
            .iter()
            .filter(|(&f, iv)| iv.contains(row[f]))
            .count();
        if hits > 0 {
            matched.push((hits, i));
        } else {
            rest.push(i);
        }
    }
    matched.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);
    matched.into_iter().map(|(_, i)| i).chain(rest).collect()
}

/// Takes the first `n_gen` ranked rows (cycling when `x` is smaller) and overwrites every
/// rule feature column with uniform draws, with replacement, from that feature's grid.
pub fn generate_synthetic(
    x: &[Vec<f64>],
    rule: &Rule,
    grid: &ValueGrid,
    n_gen: usize,
    seed: u64,
) -> Result<SynthSet, NeighborhoodError> {
    if n_gen == 0 {
        return Err(NeighborhoodError::NGen);
    }
    if x.is_empty() {
        return Err(NeighborhoodError::NoRows);
    }
    let ranked = rank_candidates(x, rule, seed);
    let provenance: Vec<usize> = ranked.iter().copied().cycle().take(n_gen).collect();
    let mut rows: Vec<Vec<f64>> = provenance.iter().map(|&i| x[i].clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    for feature in rule.features() {
        let values = grid
            .get(feature)
            .filter(|v| !v.is_empty())
            .ok_or(NeighborhoodError::MissingGrid(feature))?;
        for row in rows.iter_mut() {
            row[feature] = values[rng.gen_range(0..values.len())];
        }
    }
    Ok(SynthSet { rows, provenance })
}

/// Reference matrix for neighborhood sampling: the training rows followed by the instance.
fn reference_rows(
    x_expl: &[f64],
    x_train: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, NeighborhoodError> {
    let d = x_expl.len();
    if let Some(row) = x_train.iter().position(|r| r.len() != d) {
        return Err(NeighborhoodError::Width {
            row,
            expected: d,
            found: x_train[row].len(),
        });
    }
    let mut x = x_train.to_vec();
    x.push(x_expl.to_vec());
    Ok(x)
}

/// Generates the synthetic neighborhood of `rule` around the instance `x_expl`.
pub fn sample_neighborhood(
    x_expl: &[f64],
    rule: &Rule,
    x_train: &[Vec<f64>],
    meta: &[FeatureMeta],
    n_gen: usize,
    seed: u64,
) -> Result<SynthSet, NeighborhoodError> {
    let rule = rule.simplify()?;
    let x = reference_rows(x_expl, x_train)?;
    if x_expl.len() < rule.required_width() {
        return Err(RuleError::Width {
            feature: rule.required_width() - 1,
            found: x_expl.len(),
        }
        .into());
    }
    let grid = build_value_grid(&x, &rule, meta)?;
    generate_synthetic(&x, &rule, &grid, n_gen, seed)
}

/// Fraction of the synthetic neighborhood on which the detector agrees with the instance's
/// own decision: `mean(score < t)` for an outlier, `mean(score >= t)` otherwise.
#[allow(clippy::too_many_arguments)]
pub fn estimate_precision<S: Scorer + ?Sized>(
    detector: &S,
    th: &Threshold,
    x_expl: &[f64],
    y_expl: f64,
    rule: &Rule,
    x_train: &[Vec<f64>],
    meta: &[FeatureMeta],
    n_gen: usize,
    seed: u64,
) -> Result<f64, NeighborhoodError> {
    let synth = sample_neighborhood(x_expl, rule, x_train, meta, n_gen, seed)?;
    precision_on(detector, th, y_expl, &synth)
}

/// Precision of an already generated neighborhood.
pub fn precision_on<S: Scorer + ?Sized>(
    detector: &S,
    th: &Threshold,
    y_expl: f64,
    synth: &SynthSet,
) -> Result<f64, NeighborhoodError> {
    let scores = detector.score(&synth.rows)?;
    if scores.len() != synth.rows.len() {
        return Err(NeighborhoodError::ScoreCount {
            expected: synth.rows.len(),
            found: scores.len(),
        });
    }
    let outlier = th.is_outlier(y_expl);
    let agree = scores
        .iter()
        .filter(|&&s| if outlier { s < th.t } else { s >= th.t })
        .count();
    Ok(agree as f64 / scores.len() as f64)
}

/// Writes the synthetic rows as comma-separated text with a header and a trailing
/// `source_row` provenance column.
pub fn write_synth_csv(
    synth: &SynthSet,
    meta: &[FeatureMeta],
    mut out: impl Write,
) -> Result<(), NeighborhoodError> {
    let header: Vec<&str> = meta.iter().map(|m| m.name.as_str()).collect();
    writeln!(out, "{},source_row", header.join(","))?;
    for (row, src) in synth.rows.iter().zip(&synth.provenance) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{},{src}", cells.join(","))?;
    }
    Ok(())
}
