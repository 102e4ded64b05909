//! Tabular ingestion, feature metadata, standardization and the train/test split.
//!
//! Rows are stored as `Vec<Vec<f64>>` in file column order. Categorical columns hold
//! non-negative integer codes as reals, so every downstream component (detectors, the
//! surrogate tree, rules) works on a single numeric matrix.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer-valued columns with at most this many distinct codes are inferred as categorical.
pub const MAX_INFERRED_CATEGORIES: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column '{column}': missing value")]
    Missing { row: usize, column: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RowWidth {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate column name '{0}'")]
    DuplicateColumn(String),
    #[error("kind override names unknown column '{0}'")]
    UnknownColumn(String),
    #[error("column '{0}' cannot be categorical: values must be non-negative integers")]
    NotCategorical(String),
    #[error("invalid kind override file: {0}")]
    Overrides(String),
    #[error("dataset must have at least one row and one column")]
    Empty,
    #[error("row {row} has {found} values, dataset has {expected} features")]
    Shape {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("test size {n_test} must satisfy 0 < n_test < {n_rows}")]
    SplitSize { n_test: usize, n_rows: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub kind: FeatureKind,
    pub index: usize,
    /// Code table of a categorical column, ascending. Empty for numeric columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub codes: Vec<i64>,
}

impl FeatureMeta {
    pub fn numeric(name: impl Into<String>, index: usize) -> Self {
        FeatureMeta {
            name: name.into(),
            kind: FeatureKind::Numeric,
            index,
            codes: Vec::new(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == FeatureKind::Categorical
    }
}

/// Default metadata: `feature_0 .. feature_{d-1}`, all numeric.
pub fn default_meta(d: usize) -> Vec<FeatureMeta> {
    (0..d)
        .map(|j| FeatureMeta::numeric(format!("feature_{j}"), j))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    rows: Vec<Vec<f64>>,
    meta: Vec<FeatureMeta>,
}

impl Dataset {
    /// Builds a dataset, checking shape, finiteness and the categorical code tables.
    pub fn new(rows: Vec<Vec<f64>>, meta: Vec<FeatureMeta>) -> Result<Self, DataError> {
        let d = meta.len();
        if rows.is_empty() || d == 0 {
            return Err(DataError::Empty);
        }
        let mut seen = HashSet::new();
        for m in &meta {
            if !seen.insert(m.name.as_str()) {
                return Err(DataError::DuplicateColumn(m.name.clone()));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(DataError::Shape {
                    row: i,
                    expected: d,
                    found: row.len(),
                });
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { row: i, column: j });
            }
        }
        let mut meta = meta;
        for (j, m) in meta.iter_mut().enumerate() {
            m.index = j;
            if m.is_categorical() {
                let codes = integer_codes(rows.iter().map(|r| r[j]))
                    .ok_or_else(|| DataError::NotCategorical(m.name.clone()))?;
                if m.codes.is_empty() {
                    m.codes = codes.into_iter().collect();
                } else if !codes.iter().all(|c| m.codes.binary_search(c).is_ok()) {
                    return Err(DataError::NotCategorical(m.name.clone()));
                }
            } else {
                m.codes.clear();
            }
        }
        Ok(Dataset { rows, meta })
    }

    /// Numeric dataset with default feature names.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, DataError> {
        let d = rows.first().map_or(0, Vec::len);
        Dataset::new(rows, default_meta(d))
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn meta(&self) -> &[FeatureMeta] {
        &self.meta
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.meta.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[j])
    }

    /// Sub-dataset with the given rows (in the given order), sharing this dataset's metadata.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }
}

/// Returns the sorted distinct codes if every value is a non-negative integer.
fn integer_codes(values: impl Iterator<Item = f64>) -> Option<BTreeSet<i64>> {
    let mut codes = BTreeSet::new();
    for v in values {
        if v < 0.0 || v.fract() != 0.0 || v > i64::MAX as f64 {
            return None;
        }
        codes.insert(v as i64);
    }
    Some(codes)
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Field delimiter; auto-detected among `,`, `;` and tab when `None`.
    pub delimiter: Option<u8>,
    /// Per-column kind overrides by column name.
    pub kinds: HashMap<String, FeatureKind>,
}

/// Picks the candidate delimiter occurring most often in the header line.
fn detect_delimiter(header: &str) -> u8 {
    (*b",;\t")
        .into_iter()
        .max_by_key(|&c| (header.bytes().filter(|&b| b == c).count(), c == b','))
        .unwrap_or(b',')
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.to_ascii_lowercase().as_str(),
        "" | "?" | "na" | "nan" | "null" | "none"
    )
}

pub fn load_table(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_table(&bytes, opts)
}

/// Parses delimiter-separated text with a header row.
pub fn parse_table(bytes: &[u8], opts: &LoadOptions) -> Result<Dataset, DataError> {
    let header_line = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    let delimiter = opts
        .delimiter
        .unwrap_or_else(|| detect_delimiter(&String::from_utf8_lossy(header_line)));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);

    let names: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let d = names.len();
    for name in opts.kinds.keys() {
        if !names.contains(name) {
            return Err(DataError::UnknownColumn(name.clone()));
        }
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // skip blank trailing lines
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != d {
            return Err(DataError::RowWidth {
                row: i + 1,
                expected: d,
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(d);
        for (j, cell) in record.iter().enumerate() {
            if is_missing(cell) {
                return Err(DataError::Missing {
                    row: i + 1,
                    column: names[j].clone(),
                });
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(DataError::Parse {
                        row: i + 1,
                        column: names[j].clone(),
                        value: cell.to_owned(),
                    })
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }

    let meta = names
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let inferred = match integer_codes(rows.iter().map(|r| r[j])) {
                Some(codes) if codes.len() <= MAX_INFERRED_CATEGORIES => FeatureKind::Categorical,
                _ => FeatureKind::Numeric,
            };
            let kind = opts.kinds.get(&name).copied().unwrap_or(inferred);
            FeatureMeta {
                name,
                kind,
                index: j,
                codes: Vec::new(),
            }
        })
        .collect();
    Dataset::new(rows, meta)
}

/// Reads a JSON object mapping column names to `"numeric"` or `"categorical"`.
pub fn load_kind_overrides(
    path: impl AsRef<Path>,
) -> Result<HashMap<String, FeatureKind>, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| DataError::Overrides(e.to_string()))
}

/// Per-feature affine standardization. Categorical columns pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population moments per numeric column; a zero standard deviation is stored as 1.
    pub fn fit(train: &Dataset) -> Standardizer {
        let n = train.n_rows() as f64;
        let (mean, std) = train
            .meta()
            .iter()
            .map(|m| {
                if m.is_categorical() {
                    return (0.0, 1.0);
                }
                let mu = train.column(m.index).sum::<f64>() / n;
                let var = train.column(m.index).map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                let sigma = var.sqrt();
                (mu, if sigma > 0.0 { sigma } else { 1.0 })
            })
            .unzip();
        Standardizer { mean, std }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// A seeded train/test partition with the original row indices of each side.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Draws `n_test` rows uniformly without replacement as the test set. Both index lists
/// are returned in ascending order.
pub fn split_train_test(ds: &Dataset, n_test: usize, seed: u64) -> Result<Split, DataError> {
    let n = ds.n_rows();
    if n_test == 0 || n_test >= n {
        return Err(DataError::SplitSize {
            n_test,
            n_rows: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_indices = sample(&mut rng, n, n_test).into_vec();
    test_indices.sort_unstable();
    let mut is_test = vec![false; n];
    for &i in &test_indices {
        is_test[i] = true;
    }
    let train_indices: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    Ok(Split {
        train: ds.select(&train_indices),
        test: ds.select(&test_indices),
        train_indices,
        test_indices,
    })
}
