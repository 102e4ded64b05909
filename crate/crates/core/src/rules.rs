//! Conjunctive threshold rules: satisfaction, simplification, coverage, validity and text
//! rendering.
//!
//! `Le` is inclusive and `Gt` is strict, mirroring how the regression tree routes rows.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::FeatureMeta;
use crate::tree::PathStep;

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("row has {found} values but the rule references feature {feature}")]
    Width { feature: usize, found: usize },
    #[error("predicates on feature {feature} are contradictory (> {gt} and <= {le})")]
    EmptyInterval { feature: usize, gt: f64, le: f64 },
    #[error("cannot parse rule term '{0}'")]
    Parse(String),
    #[error("unknown feature name '{0}'")]
    UnknownFeature(String),
    #[error("coverage needs at least one row")]
    NoRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "LE")]
    Le,
    #[serde(rename = "GT")]
    Gt,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Le => "<=",
            Op::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub feature: usize,
    pub op: Op,
    pub threshold: f64,
}

impl Predicate {
    pub fn le(feature: usize, threshold: f64) -> Self {
        Predicate {
            feature,
            op: Op::Le,
            threshold,
        }
    }

    pub fn gt(feature: usize, threshold: f64) -> Self {
        Predicate {
            feature,
            op: Op::Gt,
            threshold,
        }
    }

    pub fn holds(&self, value: f64) -> bool {
        match self.op {
            Op::Le => value <= self.threshold,
            Op::Gt => value > self.threshold,
        }
    }
}

/// Half-open interval `(gt, le]` a feature must fall in; either side may be unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Interval {
    pub gt: Option<f64>,
    pub le: Option<f64>,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.gt.is_none_or(|g| v > g) && self.le.is_none_or(|l| v <= l)
    }
}

/// A conjunction of threshold predicates. The empty rule is always true.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Rule {
    pub predicates: Vec<Predicate>,
    /// Predicted anomaly score of the tree leaf the rule was read from.
    pub leaf_value: Option<f64>,
}

impl Rule {
    pub fn new(predicates: Vec<Predicate>) -> Self {
        Rule {
            predicates,
            leaf_value: None,
        }
    }

    pub fn from_path(path: &[PathStep], leaf_value: Option<f64>) -> Self {
        Rule {
            predicates: path
                .iter()
                .map(|s| Predicate {
                    feature: s.feature,
                    op: s.direction,
                    threshold: s.threshold,
                })
                .collect(),
            leaf_value,
        }
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    /// Smallest row width this rule can be evaluated on.
    pub fn required_width(&self) -> usize {
        self.predicates.iter().map(|p| p.feature + 1).max().unwrap_or(0)
    }

    pub fn satisfies(&self, z: &[f64]) -> Result<bool, RuleError> {
        if z.len() < self.required_width() {
            return Err(RuleError::Width {
                feature: self.required_width() - 1,
                found: z.len(),
            });
        }
        Ok(self.predicates.iter().all(|p| p.holds(z[p.feature])))
    }

    /// Indicator form of [`Rule::satisfies`]: 1 or 0.
    pub fn indicator(&self, z: &[f64]) -> Result<u8, RuleError> {
        self.satisfies(z).map(u8::from)
    }

    /// Per-feature intersection of all predicates, keyed by ascending feature index.
    pub fn intervals(&self) -> BTreeMap<usize, Interval> {
        let mut out: BTreeMap<usize, Interval> = BTreeMap::new();
        for p in &self.predicates {
            let iv = out.entry(p.feature).or_default();
            match p.op {
                Op::Gt => iv.gt = Some(iv.gt.map_or(p.threshold, |g| g.max(p.threshold))),
                Op::Le => iv.le = Some(iv.le.map_or(p.threshold, |l| l.min(p.threshold))),
            }
        }
        out
    }

    /// Distinct features the rule constrains, ascending.
    pub fn features(&self) -> Vec<usize> {
        self.intervals().into_keys().collect()
    }

    /// Keeps the tightest `Gt` and `Le` bound per feature, ordered by feature with `Gt`
    /// first. The satisfying set is unchanged.
    pub fn simplify(&self) -> Result<Rule, RuleError> {
        let mut predicates = Vec::new();
        for (feature, iv) in self.intervals() {
            if let (Some(gt), Some(le)) = (iv.gt, iv.le) {
                if gt >= le {
                    return Err(RuleError::EmptyInterval { feature, gt, le });
                }
            }
            if let Some(gt) = iv.gt {
                predicates.push(Predicate::gt(feature, gt));
            }
            if let Some(le) = iv.le {
                predicates.push(Predicate::le(feature, le));
            }
        }
        Ok(Rule {
            predicates,
            leaf_value: self.leaf_value,
        })
    }

    pub fn render(&self, meta: &[FeatureMeta]) -> String {
        if self.predicates.is_empty() {
            return "TRUE".to_owned();
        }
        self.predicates
            .iter()
            .map(|p| format!("{} {} {}", feature_name(meta, p.feature), p.op.symbol(), p.threshold))
            .collect::<Vec<_>>()
            .join(" AND ")
    }

    /// Like [`Rule::render`], but constraints on categorical features are shown as the set of
    /// codes they admit, e.g. `color ∈ {0, 1}`.
    pub fn render_annotated(&self, meta: &[FeatureMeta]) -> String {
        if self.predicates.is_empty() {
            return "TRUE".to_owned();
        }
        let intervals = self.intervals();
        let mut terms = Vec::new();
        for (feature, iv) in &intervals {
            let name = feature_name(meta, *feature);
            match meta.get(*feature) {
                Some(m) if m.is_categorical() && !m.codes.is_empty() => {
                    let codes: Vec<String> = m
                        .codes
                        .iter()
                        .filter(|&&c| iv.contains(c as f64))
                        .map(i64::to_string)
                        .collect();
                    terms.push(format!("{name} ∈ {{{}}}", codes.join(", ")));
                }
                _ => {
                    if let Some(gt) = iv.gt {
                        terms.push(format!("{name} > {gt}"));
                    }
                    if let Some(le) = iv.le {
                        terms.push(format!("{name} <= {le}"));
                    }
                }
            }
        }
        terms.join(" AND ")
    }

    /// Inverse of [`Rule::render`]. Names are resolved through `meta`, falling back to the
    /// `feature_<i>` form.
    pub fn parse(text: &str, meta: &[FeatureMeta]) -> Result<Rule, RuleError> {
        let text = text.trim();
        if text == "TRUE" {
            return Ok(Rule::default());
        }
        let predicates = text
            .split(" AND ")
            .map(|term| {
                let (name, op, value) = if let Some(pos) = term.rfind(" <= ") {
                    (&term[..pos], Op::Le, &term[pos + 4..])
                } else if let Some(pos) = term.rfind(" > ") {
                    (&term[..pos], Op::Gt, &term[pos + 3..])
                } else {
                    return Err(RuleError::Parse(term.to_owned()));
                };
                let threshold = value
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| RuleError::Parse(term.to_owned()))?;
                Ok(Predicate {
                    feature: feature_index(meta, name.trim())?,
                    op,
                    threshold,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Rule::new(predicates))
    }

    pub fn to_json(&self, meta: &[FeatureMeta]) -> RuleJson {
        RuleJson {
            predicates: self.predicates.clone(),
            leaf_value: self.leaf_value,
            rendered: self.render(meta),
            annotated: self.render_annotated(meta),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&[]))
    }
}

/// Serialized form of a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleJson {
    pub predicates: Vec<Predicate>,
    pub leaf_value: Option<f64>,
    pub rendered: String,
    pub annotated: String,
}

impl From<RuleJson> for Rule {
    fn from(j: RuleJson) -> Rule {
        Rule {
            predicates: j.predicates,
            leaf_value: j.leaf_value,
        }
    }
}

fn feature_name(meta: &[FeatureMeta], feature: usize) -> String {
    meta.get(feature)
        .map_or_else(|| format!("feature_{feature}"), |m| m.name.clone())
}

fn feature_index(meta: &[FeatureMeta], name: &str) -> Result<usize, RuleError> {
    if let Some(m) = meta.iter().find(|m| m.name == name) {
        return Ok(m.index);
    }
    name.strip_prefix("feature_")
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&i| meta.is_empty() || i >= meta.len())
        .ok_or_else(|| RuleError::UnknownFeature(name.to_owned()))
}

/// Fraction of rows satisfying the rule.
pub fn coverage(rule: &Rule, rows: &[Vec<f64>]) -> Result<f64, RuleError> {
    if rows.is_empty() {
        return Err(RuleError::NoRows);
    }
    let mut hits = 0usize;
    for r in rows {
        hits += usize::from(rule.satisfies(r)?);
    }
    Ok(hits as f64 / rows.len() as f64)
}

/// Whether the explained instance satisfies its own rule.
pub fn validity(rule: &Rule, x: &[f64]) -> Result<bool, RuleError> {
    rule.satisfies(x)
}
