//! Command-line front-end: `fit`, `explain` and `benchmark`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{
    load_kind_overrides, load_table, split_train_test, Dataset, FeatureMeta, LoadOptions, Split,
};
use crate::detect::{
    DetectorModel, ExternalScorer, Gmm, GmmParams, IsolationForest, IsolationForestParams,
    Scorer, Threshold,
};
use crate::eval::{canonical_json, explain_test_set, BenchmarkReport, EvalConfig, TIMING_KEYS};
use crate::explainer::{explain_instance, DtorConfig};
use crate::neighborhood::{precision_on, sample_neighborhood, write_synth_csv};
use crate::rules::coverage;
use crate::tree::TreeParams;

pub const ARTIFACT_FORMAT: &str = "dtor-model/1";

#[derive(Debug, Parser)]
#[command(name = "dtor", version, about = "Rule-based explanations of anomaly scores")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a detector on the training split and write a model artifact.
    Fit(FitArgs),
    /// Explain one row of the dataset, or an inline row, with a fitted model.
    Explain(ExplainArgs),
    /// Split, fit, explain every test row and write a report.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Iforest,
    Gmm,
    External,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Delimiter-separated table with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON object mapping column names to "numeric" or "categorical".
    #[arg(long)]
    pub kinds: Option<PathBuf>,
    /// Field delimiter; auto-detected among ',', ';' and tab when omitted.
    #[arg(long)]
    pub delimiter: Option<char>,
    /// Number of rows held out as the test set.
    #[arg(long, default_value_t = 50)]
    pub n_test: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DetectorArgs {
    #[arg(long, value_enum, default_value_t = DetectorKind::Iforest)]
    pub detector: DetectorKind,
    #[arg(long, default_value_t = 100)]
    pub n_trees: usize,
    #[arg(long, default_value_t = 256)]
    pub subsample: usize,
    /// GMM component count.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// GMM variance floor.
    #[arg(long, default_value_t = 1e-6)]
    pub reg: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Shell command for the external scorer.
    #[arg(long)]
    pub external_command: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub contamination: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExplainerArgs {
    #[arg(long, default_value_t = 8)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub min_impurity_decrease: f64,
    #[arg(long, default_value_t = 1)]
    pub min_samples_leaf: usize,
    /// Weight of the explained instance as a fraction of the training size.
    #[arg(long, default_value_t = 0.1)]
    pub beta_factor: f64,
    /// Synthetic rows used for precision.
    #[arg(long, default_value_t = 1000)]
    pub n_gen: usize,
}

impl ExplainerArgs {
    pub fn dtor_config(&self) -> DtorConfig {
        DtorConfig {
            beta_factor: self.beta_factor,
            tree: TreeParams {
                max_depth: self.max_depth,
                min_impurity_decrease: self.min_impurity_decrease,
                min_samples_leaf: self.min_samples_leaf,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Artifact path; printed to stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    /// Model artifact written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Row index (0-based, header excluded) in the dataset.
    #[arg(long, conflicts_with = "inline", required_unless_present = "inline")]
    pub row: Option<usize>,
    /// Comma-separated values in dataset column order.
    #[arg(long)]
    pub inline: Option<String>,
    /// Dataset override; defaults to the one recorded in the artifact.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub explainer: ExplainerArgs,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Write the synthetic neighborhood here as CSV with a source_row column.
    #[arg(long)]
    pub dump_synth: Option<PathBuf>,
    /// Emit canonical JSON (sorted keys, fixed float format, no timings).
    #[arg(long)]
    pub canonical: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub explainer: ExplainerArgs,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Directory receiving report.json, report.canonical.json and report.txt.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Fully resolved configuration, echoed into every output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataArgs,
    pub detector: DetectorArgs,
    pub explainer: Option<ExplainerArgs>,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub config: RunConfig,
    pub meta: Vec<FeatureMeta>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub threshold: Threshold,
    pub train_scores: Vec<f64>,
    pub model: DetectorModel,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Explain(args) => cmd_explain(&args),
        Command::Benchmark(args) => cmd_benchmark(&args),
    }
}

pub fn load_dataset(args: &DataArgs) -> Result<Dataset> {
    let mut opts = LoadOptions::default();
    if let Some(path) = &args.kinds {
        opts.kinds = load_kind_overrides(path)?;
    }
    if let Some(c) = args.delimiter {
        ensure!(c.is_ascii(), "delimiter must be a single ASCII character");
        opts.delimiter = Some(c as u8);
    }
    load_table(&args.data, &opts).with_context(|| format!("loading {}", args.data.display()))
}

pub fn fit_detector(train: &Dataset, args: &DetectorArgs, seed: u64) -> Result<DetectorModel> {
    Ok(match args.detector {
        DetectorKind::Iforest => DetectorModel::IsolationForest(IsolationForest::fit(
            train.rows(),
            &IsolationForestParams {
                n_trees: args.n_trees,
                subsample: args.subsample,
            },
            seed,
        )?),
        DetectorKind::Gmm => DetectorModel::Gmm(Gmm::fit(
            train,
            &GmmParams {
                k: args.k,
                reg: args.reg,
                max_iter: args.max_iter,
                tol: args.tol,
            },
            seed,
        )?),
        DetectorKind::External => {
            let Some(cmd) = &args.external_command else {
                bail!("--external-command is required with --detector external");
            };
            DetectorModel::External(ExternalScorer::new(cmd.clone(), Some(train.n_features())))
        }
    })
}

fn dataset_id(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

struct Fitted {
    split: Split,
    model: DetectorModel,
    train_scores: Vec<f64>,
    threshold: Threshold,
}

fn fit_pipeline(ds: &Dataset, data: &DataArgs, det: &DetectorArgs, seed: u64) -> Result<Fitted> {
    let split = split_train_test(ds, data.n_test, seed)?;
    let model = fit_detector(&split.train, det, seed)?;
    let train_scores = model.score(split.train.rows())?;
    let threshold = Threshold::from_contamination(&train_scores, det.contamination)?;
    Ok(Fitted {
        split,
        model,
        train_scores,
        threshold,
    })
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let ds = load_dataset(&args.data)?;
    let fitted = fit_pipeline(&ds, &args.data, &args.detector, args.seed)?;
    let artifact = ModelArtifact {
        format: ARTIFACT_FORMAT.to_owned(),
        config: RunConfig {
            data: args.data.clone(),
            detector: args.detector.clone(),
            explainer: None,
            seed: args.seed,
        },
        meta: ds.meta().to_vec(),
        train_indices: fitted.split.train_indices,
        test_indices: fitted.split.test_indices,
        threshold: fitted.threshold,
        train_scores: fitted.train_scores,
        model: fitted.model,
    };
    write_output(args.output.as_deref(), &serde_json::to_string_pretty(&artifact)?)
}

pub fn load_artifact(path: &Path) -> Result<ModelArtifact> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let artifact: ModelArtifact =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    ensure!(
        artifact.format == ARTIFACT_FORMAT,
        "unsupported artifact format '{}'",
        artifact.format
    );
    Ok(artifact)
}

fn parse_inline(text: &str, d: usize) -> Result<Vec<f64>> {
    let values = text
        .split([',', ';', '\t'])
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .with_context(|| format!("cannot parse '{s}' as a number"))
        })
        .collect::<Result<Vec<f64>>>()?;
    ensure!(values.len() == d, "inline row has {} values, dataset has {d} features", values.len());
    Ok(values)
}

pub fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let artifact = load_artifact(&args.model)?;
    let mut data_args = artifact.config.data.clone();
    if let Some(p) = &args.data {
        data_args.data = p.clone();
    }
    let ds = load_dataset(&data_args)?;
    ensure!(
        ds.n_features() == artifact.meta.len(),
        "dataset has {} features, model was fitted on {}",
        ds.n_features(),
        artifact.meta.len()
    );
    let train = ds.select(&artifact.train_indices);
    ensure!(
        artifact.train_scores.len() == train.n_rows(),
        "artifact has {} training scores for {} training rows",
        artifact.train_scores.len(),
        train.n_rows()
    );
    let x = match (args.row, &args.inline) {
        (Some(i), _) => {
            ensure!(i < ds.n_rows(), "row {i} is out of range (dataset has {} rows)", ds.n_rows());
            ds.rows()[i].clone()
        }
        (None, Some(text)) => parse_inline(text, ds.n_features())?,
        (None, None) => bail!("either --row or --inline is required"),
    };

    let score = artifact.model.score(std::slice::from_ref(&x))?[0];
    let th = artifact.threshold;
    let cfg = args.explainer.dtor_config();
    let start = Instant::now();
    let expl = explain_instance(&x, score, train.rows(), &artifact.train_scores, &cfg)?;
    let fit_seconds = start.elapsed().as_secs_f64();
    let rule = expl.rule;
    let p_start = Instant::now();
    let synth = sample_neighborhood(&x, &rule, train.rows(), ds.meta(), args.explainer.n_gen, args.seed)?;
    let precision = precision_on(&artifact.model, &th, score, &synth)?;
    let precision_seconds = p_start.elapsed().as_secs_f64();
    if let Some(path) = &args.dump_synth {
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_synth_csv(&synth, ds.meta(), std::io::BufWriter::new(file))?;
    }

    let config = RunConfig {
        data: data_args,
        detector: artifact.config.detector.clone(),
        explainer: Some(args.explainer.clone()),
        seed: args.seed,
    };
    let out = json!({
        "config": config,
        "instance": { "row": args.row, "values": x },
        "score": score,
        "threshold": th.t,
        "is_outlier": th.is_outlier(score),
        "rule": rule.to_json(ds.meta()),
        "leaf_value": rule.leaf_value,
        "rule_length": rule.len(),
        "validity": rule.indicator(&x)?,
        "precision": precision,
        "coverage": coverage(&rule, train.rows())?,
        "fit_seconds": fit_seconds,
        "precision_seconds": precision_seconds,
        "wall_seconds": fit_seconds + precision_seconds,
    });
    let text = if args.canonical {
        canonical_without_timings(out)
    } else {
        serde_json::to_string_pretty(&out)?
    };
    write_output(args.output.as_deref(), &text)
}

fn canonical_without_timings(mut value: Value) -> String {
    if let Value::Object(map) = &mut value {
        for k in TIMING_KEYS {
            map.remove(k);
        }
    }
    canonical_json(&value)
}

/// Runs the full pipeline and returns the report without writing anything.
pub fn run_benchmark(args: &BenchmarkArgs) -> Result<BenchmarkReport> {
    let ds = load_dataset(&args.data)?;
    let fitted = fit_pipeline(&ds, &args.data, &args.detector, args.seed)?;
    let eval_cfg = EvalConfig {
        dtor: args.explainer.dtor_config(),
        n_gen: args.explainer.n_gen,
        seed: args.seed,
    };
    let mut records = explain_test_set(
        &fitted.split.train,
        &fitted.split.test,
        &fitted.model,
        &fitted.threshold,
        &eval_cfg,
    )?;
    for (rec, &row) in records.iter_mut().zip(&fitted.split.test_indices) {
        rec.row_id = Some(row);
    }
    let config = RunConfig {
        data: args.data.clone(),
        detector: args.detector.clone(),
        explainer: Some(args.explainer.clone()),
        seed: args.seed,
    };
    let mut config_echo = serde_json::to_value(&config)?;
    config_echo["threshold"] = json!(fitted.threshold);
    Ok(BenchmarkReport::new(
        dataset_id(&args.data.data),
        args.detector.detector.to_possible_value().map_or("?".into(), |v| v.get_name().to_owned()),
        config_echo,
        records,
    )?)
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let report = run_benchmark(args)?;
    let table = report.table();
    if let Some(dir) = &args.output {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        fs::write(dir.join("report.canonical.json"), report.canonical_json())?;
        fs::write(dir.join("report.txt"), &table)?;
    }
    print!("{table}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_default_flags() {
        let cli = Cli::try_parse_from(["dtor", "benchmark", "--data", "x.csv"]).unwrap();
        let Command::Benchmark(args) = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(args.seed, 42);
        assert_eq!(args.data.n_test, 50);
        assert_eq!(args.detector.contamination, 0.05);
        let cfg = args.explainer.dtor_config();
        assert_eq!(cfg.beta_factor, 0.1);
        assert_eq!(cfg.tree, TreeParams::default());
        assert_eq!(args.explainer.n_gen, 1000);
    }

    #[test]
    fn explain_needs_an_instance_selector() {
        assert!(Cli::try_parse_from(["dtor", "explain", "--model", "m.json"]).is_err());
        assert!(Cli::try_parse_from(["dtor", "explain", "--model", "m.json", "--row", "1", "--inline", "1,2"]).is_err());
    }

    #[test]
    fn inline_rows_are_checked() {
        assert_eq!(parse_inline("1, 2.5,-3", 3).unwrap(), vec![1.0, 2.5, -3.0]);
        assert!(parse_inline("1,2", 3).is_err());
        assert!(parse_inline("1,x,3", 3).is_err());
    }
}
