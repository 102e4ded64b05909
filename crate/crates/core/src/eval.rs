//! Benchmark harness: explain every row of a test set, attach precision, coverage,
//! validity, rule length and timings, and aggregate the results.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::data::Dataset;
use crate::detect::{DetectError, Scorer, Threshold};
use crate::explainer::{explain_instance, DtorConfig};
use crate::neighborhood::{estimate_precision, DEFAULT_N_GEN};
use crate::rules::{coverage, RuleJson};

/// Keys holding wall-clock measurements; they are left out of canonical JSON.
pub const TIMING_KEYS: [&str; 5] = [
    "fit_seconds",
    "precision_seconds",
    "wall_seconds",
    "exec_time_mean",
    "exec_time_max",
];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scoring the training rows failed: {0}")]
    TrainScores(#[source] DetectError),
    #[error("train has {train} features, test has {test}")]
    Width { train: usize, test: usize },
    #[error("no records to aggregate")]
    NoRecords,
    #[error("all {0} records errored")]
    AllErrored(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub dtor: DtorConfig,
    pub n_gen: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            dtor: DtorConfig::default(),
            n_gen: DEFAULT_N_GEN,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    /// Position in the test set.
    pub index: usize,
    /// Row index in the source dataset, when known.
    pub row_id: Option<usize>,
    pub seed: u64,
    pub score: f64,
    pub is_outlier: bool,
    pub rule: Option<RuleJson>,
    pub precision: f64,
    pub coverage: f64,
    pub validity: u8,
    pub rule_length: usize,
    /// Tree fitting and path extraction.
    pub fit_seconds: f64,
    /// Neighborhood generation and scoring.
    pub precision_seconds: f64,
    /// Total per-instance time, the figure aggregated as execution time.
    pub wall_seconds: f64,
    pub error: Option<String>,
}

impl ExplanationRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Mixes a base seed with an instance index (splitmix64 finalizer), so that one instance
/// can be re-run alone with the seed it had in its batch.
pub fn derive_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Explains one instance and measures it. Failures are recorded, not returned.
#[allow(clippy::too_many_arguments)]
pub fn explain_record<S: Scorer + ?Sized>(
    index: usize,
    x: &[f64],
    score: f64,
    train: &Dataset,
    train_scores: &[f64],
    detector: &S,
    th: &Threshold,
    cfg: &EvalConfig,
) -> ExplanationRecord {
    let seed = derive_seed(cfg.seed, index);
    let mut rec = ExplanationRecord {
        index,
        row_id: None,
        seed,
        score,
        is_outlier: th.is_outlier(score),
        rule: None,
        precision: 0.0,
        coverage: 0.0,
        validity: 0,
        rule_length: 0,
        fit_seconds: 0.0,
        precision_seconds: 0.0,
        wall_seconds: 0.0,
        error: None,
    };
    let start = Instant::now();
    let outcome = (|| -> Result<(), String> {
        let expl = explain_instance(x, score, train.rows(), train_scores, &cfg.dtor)
            .map_err(|e| e.to_string())?;
        rec.fit_seconds = start.elapsed().as_secs_f64();
        let rule = expl.rule;
        rec.validity = rule.indicator(x).map_err(|e| e.to_string())?;
        rec.rule_length = rule.len();
        rec.coverage = coverage(&rule, train.rows()).map_err(|e| e.to_string())?;
        rec.rule = Some(rule.to_json(train.meta()));
        let p_start = Instant::now();
        rec.precision = estimate_precision(
            detector,
            th,
            x,
            score,
            &rule,
            train.rows(),
            train.meta(),
            cfg.n_gen,
            seed,
        )
        .map_err(|e| e.to_string())?;
        rec.precision_seconds = p_start.elapsed().as_secs_f64();
        Ok(())
    })();
    rec.wall_seconds = start.elapsed().as_secs_f64();
    if let Err(e) = outcome {
        rec.error = Some(e);
    }
    rec
}

/// Explains every test row in order. Scoring the training rows must succeed; failures on
/// individual test rows end up in their records.
pub fn explain_test_set<S: Scorer + ?Sized>(
    train: &Dataset,
    test: &Dataset,
    detector: &S,
    th: &Threshold,
    cfg: &EvalConfig,
) -> Result<Vec<ExplanationRecord>, EvalError> {
    if train.n_features() != test.n_features() {
        return Err(EvalError::Width {
            train: train.n_features(),
            test: test.n_features(),
        });
    }
    let train_scores = detector.score(train.rows()).map_err(EvalError::TrainScores)?;
    let test_scores = detector.score(test.rows());
    let records = test
        .rows()
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let rec = match &test_scores {
                Ok(scores) => {
                    explain_record(i, x, scores[i], train, &train_scores, detector, th, cfg)
                }
                Err(e) => ExplanationRecord {
                    index: i,
                    row_id: None,
                    seed: derive_seed(cfg.seed, i),
                    score: f64::NAN,
                    is_outlier: false,
                    rule: None,
                    precision: 0.0,
                    coverage: 0.0,
                    validity: 0,
                    rule_length: 0,
                    fit_seconds: 0.0,
                    precision_seconds: 0.0,
                    wall_seconds: 0.0,
                    error: Some(format!("scoring failed: {e}")),
                },
            };
            log::info!(
                "instance {i}: outlier={} len={} precision={:.3} coverage={:.3} {:.3}s{}",
                rec.is_outlier,
                rec.rule_length,
                rec.precision,
                rec.coverage,
                rec.wall_seconds,
                rec.error.as_deref().map(|e| format!(" error: {e}")).unwrap_or_default()
            );
            rec
        })
        .collect();
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n_records: usize,
    pub n_errors: usize,
    pub n_outliers: usize,
    pub exec_time_mean: f64,
    pub exec_time_max: f64,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub validity_percent: f64,
    pub rule_length_mean: f64,
    pub rule_length_max: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Means and population standard deviations over the records that did not error.
pub fn aggregate(records: &[ExplanationRecord]) -> Result<Aggregates, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let ok: Vec<&ExplanationRecord> = records.iter().filter(|r| r.is_ok()).collect();
    if ok.is_empty() {
        return Err(EvalError::AllErrored(records.len()));
    }
    let col = |f: fn(&ExplanationRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let times = col(|r| r.wall_seconds);
    let (precision_mean, precision_std) = mean_std(&col(|r| r.precision));
    let (coverage_mean, coverage_std) = mean_std(&col(|r| r.coverage));
    let (validity_mean, _) = mean_std(&col(|r| f64::from(r.validity)));
    let (rule_length_mean, _) = mean_std(&col(|r| r.rule_length as f64));
    Ok(Aggregates {
        n_records: records.len(),
        n_errors: records.len() - ok.len(),
        n_outliers: ok.iter().filter(|r| r.is_outlier).count(),
        exec_time_mean: mean_std(&times).0,
        exec_time_max: times.iter().copied().fold(0.0, f64::max),
        precision_mean,
        precision_std,
        coverage_mean,
        coverage_std,
        validity_percent: 100.0 * validity_mean,
        rule_length_mean,
        rule_length_max: ok.iter().map(|r| r.rule_length).max().unwrap_or(0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub dataset: String,
    pub detector: String,
    /// Every resolved hyperparameter and seed of the run.
    pub config: Value,
    pub aggregates: Aggregates,
    pub records: Vec<ExplanationRecord>,
}

impl BenchmarkReport {
    pub fn new(
        dataset: impl Into<String>,
        detector: impl Into<String>,
        config: Value,
        records: Vec<ExplanationRecord>,
    ) -> Result<Self, EvalError> {
        Ok(BenchmarkReport {
            dataset: dataset.into(),
            detector: detector.into(),
            config,
            aggregates: aggregate(&records)?,
            records,
        })
    }

    /// Plain-text summary laid out as metric rows for one explainer column.
    pub fn table(&self) -> String {
        let a = &self.aggregates;
        let mut out = String::new();
        let rows = [
            (
                "Exec. time",
                format!("{:.2} ({:.2})", a.exec_time_mean, a.exec_time_max),
            ),
            (
                "Precision",
                format!("{:.2} ± {:.2}", a.precision_mean, a.precision_std),
            ),
            (
                "Coverage",
                format!("{:.2} ± {:.2}", a.coverage_mean, a.coverage_std),
            ),
            ("Validity %", format!("{:.0}", a.validity_percent)),
            ("Rule length", format!("{:.2}", a.rule_length_mean)),
        ];
        let _ = writeln!(out, "{:<16} {:<10} {:<12} DTOR", "dataset", "detector", "metric");
        for (i, (metric, value)) in rows.iter().enumerate() {
            let (ds, det) = if i == 0 {
                (self.dataset.as_str(), self.detector.as_str())
            } else {
                ("", "")
            };
            let _ = writeln!(out, "{ds:<16} {det:<10} {metric:<12} {value}");
        }
        if a.n_errors > 0 {
            let _ = writeln!(out, "({} of {} instances failed)", a.n_errors, a.n_records);
        }
        out
    }

    /// Canonical JSON without wall-clock fields; identical runs give identical bytes.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report is always serializable");
        canonical_json(&strip_keys(value, &TIMING_KEYS))
    }
}

fn strip_keys(value: Value, keys: &[&str]) -> Value {
    match value {
        Value::Object(map) => Value::Object(
            map.into_iter()
                .filter(|(k, _)| !keys.contains(&k.as_str()))
                .map(|(k, v)| (k, strip_keys(v, keys)))
                .collect(),
        ),
        Value::Array(items) => Value::Array(items.into_iter().map(|v| strip_keys(v, keys)).collect()),
        other => other,
    }
}

/// Serializes with sorted object keys, no whitespace, and every non-integer number
/// printed with 17 significant digits in exponent form.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                match n.as_f64() {
                    Some(f) if f.is_finite() => {
                        let _ = write!(out, "{f:.16e}");
                    }
                    _ => out.push_str("null"),
                }
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
    }
}
