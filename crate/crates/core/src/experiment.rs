//! Lambda sweeps over folds, fold aggregation, and report files.
//!
//! A sweep trains one model per (fold, lambda) cell: the unpenalized
//! baseline at lambda index 0 plus every value of a log-uniform grid, all
//! with the same hyperparameters. Each model is evaluated on the shared
//! held-out test set. Cell outputs live under the run directory:
//!
//! ```text
//! <output_dir>/manifest.json
//! <output_dir>/cells/fold{F}_lambda{J}.json     one CellResult per finished cell
//! <output_dir>/models/fold{F}_lambda{J}.json    checkpoint of that cell
//! <output_dir>/report.csv, summary.csv, report.json
//! ```
//!
//! Finished cells are skipped when a sweep is rerun in the same directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{self, Cohort, SplitPlan, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{self, FairnessReport, ReportMeta};
use crate::model::{self, Checkpoint, Hyperparameters, Objective, SparseMatrix, TrainingData};
use crate::penalty::{Bandwidth, Criterion, Distance, PenaltyConfig, PenaltyInput};
use crate::util;

/// Geometric grid from `min` to `max` inclusive:
/// `lambda_j = min * (max / min)^(j / (count - 1))`. A count of 1 yields `[max]`.
pub fn lambda_grid(count: usize, min: f64, max: f64) -> Result<Vec<f64>> {
    if !(min > 0.0 && max > min && max.is_finite()) {
        return Err(Error::Config(format!("lambda grid needs 0 < min < max, got min={min} max={max}")));
    }
    match count {
        0 => Err(Error::Config("lambda grid count must be at least 1".into())),
        1 => Ok(vec![max]),
        _ => {
            let ratio = max / min;
            let last = (count - 1) as f64;
            Ok((0..count)
                .map(|j| match j {
                    0 => min,
                    j if j == count - 1 => max,
                    j => min * ratio.powf(j as f64 / last),
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalCohort {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Exactly one of `path`, `synthetic` or `canonical`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSection {
    pub path: Option<PathBuf>,
    /// Expected attribute name of a cohort file.
    pub attribute: Option<String>,
    pub synthetic: Option<SyntheticSpec>,
    pub canonical: Option<CanonicalCohort>,
}

impl CohortSection {
    pub fn load(&self, base_dir: &Path) -> Result<Cohort> {
        match (&self.path, &self.synthetic, &self.canonical) {
            (Some(path), None, None) => {
                let path = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let cohort = cohort::load_cohort_self_described(&path)?;
                if let Some(name) = &self.attribute {
                    if *name != cohort.attribute.name {
                        return Err(Error::Schema(format!(
                            "cohort file has attribute '{}', config expects '{name}'",
                            cohort.attribute.name
                        )));
                    }
                }
                Ok(cohort)
            }
            (None, Some(spec), None) => cohort::generate_synthetic(spec),
            (None, None, Some(c)) => cohort::generate_synthetic(&SyntheticSpec::canonical(c.n, c.seed)),
            _ => Err(Error::Config(
                "[cohort] needs exactly one of path, synthetic or canonical".into(),
            )),
        }
    }
}

/// Hyperparameters as a named preset with optional per-field overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub batch_size: Option<usize>,
    pub dropout_prob: Option<f64>,
    pub hidden_dim: Option<usize>,
    pub learning_rate: Option<f64>,
    pub num_hidden_layers: Option<usize>,
    pub max_iterations: Option<usize>,
    pub batches_per_iteration: Option<usize>,
    pub patience: Option<usize>,
}

impl ModelSection {
    pub fn resolve(&self) -> Result<Hyperparameters> {
        let base = match &self.preset {
            Some(name) => Some(
                Hyperparameters::preset(name).ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))?,
            ),
            None => None,
        };
        let need = |field: &str| Error::Config(format!("[model] needs '{field}' when no preset is given"));
        let hp = Hyperparameters {
            batch_size: self.batch_size.or(base.map(|b| b.batch_size)).ok_or_else(|| need("batch_size"))?,
            dropout_prob: self.dropout_prob.or(base.map(|b| b.dropout_prob)).ok_or_else(|| need("dropout_prob"))?,
            hidden_dim: self.hidden_dim.or(base.map(|b| b.hidden_dim)).ok_or_else(|| need("hidden_dim"))?,
            learning_rate: self.learning_rate.or(base.map(|b| b.learning_rate)).ok_or_else(|| need("learning_rate"))?,
            num_hidden_layers: self
                .num_hidden_layers
                .or(base.map(|b| b.num_hidden_layers))
                .ok_or_else(|| need("num_hidden_layers"))?,
            max_iterations: self.max_iterations.or(base.map(|b| b.max_iterations)).unwrap_or(150),
            batches_per_iteration: self.batches_per_iteration.or(base.map(|b| b.batches_per_iteration)).unwrap_or(100),
            patience: self.patience.or(base.map(|b| b.patience)).unwrap_or(10),
        };
        hp.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(hp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySection {
    pub criterion: Criterion,
    pub distance: Distance,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: Bandwidth,
    #[serde(default)]
    pub input: PenaltyInput,
}

fn default_bandwidth() -> Bandwidth {
    Bandwidth::Median
}

impl PenaltySection {
    pub fn config(&self, lambda: f64) -> PenaltyConfig {
        PenaltyConfig {
            criterion: self.criterion,
            distance: self.distance,
            lambda,
            bandwidth: self.bandwidth,
            input: self.input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSection {
    #[serde(default = "default_lambda_count")]
    pub count: usize,
    #[serde(default = "default_lambda_min")]
    pub min: f64,
    #[serde(default = "default_lambda_max")]
    pub max: f64,
}

fn default_lambda_count() -> usize {
    10
}

fn default_lambda_min() -> f64 {
    1e-3
}

fn default_lambda_max() -> f64 {
    10.0
}

impl Default for LambdaSection {
    fn default() -> Self {
        LambdaSection {
            count: default_lambda_count(),
            min: default_lambda_min(),
            max: default_lambda_max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Defaults to the experiment seed.
    pub split_seed: Option<u64>,
}

fn default_folds() -> usize {
    10
}

fn default_test_fraction() -> f64 {
    0.1
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection {
            folds: default_folds(),
            test_fraction: default_test_fraction(),
            split_seed: None,
        }
    }
}

/// A sweep configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub cohort: CohortSection,
    #[serde(default)]
    pub model: ModelSection,
    pub penalty: PenaltySection,
    #[serde(default)]
    pub lambda: LambdaSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    /// Directory relative paths are resolved against; set by [`ExperimentConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_parallelism() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.resolve()?;
        self.lambdas()?;
        if self.protocol.folds == 0 {
            return Err(Error::Config("protocol.folds must be at least 1".into()));
        }
        if !(self.protocol.test_fraction > 0.0 && self.protocol.test_fraction < 1.0) {
            return Err(Error::Config("protocol.test_fraction must lie in (0, 1)".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        let sources = [
            self.cohort.path.is_some(),
            self.cohort.synthetic.is_some(),
            self.cohort.canonical.is_some(),
        ];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(Error::Config("[cohort] needs exactly one of path, synthetic or canonical".into()));
        }
        if let Bandwidth::Fixed(s) = self.penalty.bandwidth {
            if !(s > 0.0) {
                return Err(Error::Config("penalty.bandwidth must be positive".into()));
            }
        }
        Ok(())
    }

    /// Baseline 0 followed by the configured grid.
    pub fn lambdas(&self) -> Result<Vec<f64>> {
        let mut lambdas = vec![0.0];
        lambdas.extend(lambda_grid(self.lambda.count, self.lambda.min, self.lambda.max)?);
        Ok(lambdas)
    }

    pub fn split_seed(&self) -> u64 {
        self.protocol.split_seed.unwrap_or(self.seed)
    }

    /// Training seed of a fold; shared by every lambda of that fold.
    pub fn train_seed(&self, fold: usize) -> u64 {
        util::mix_seed(self.seed, fold as u64 + 1)
    }

    pub fn output_dir(&self) -> PathBuf {
        if self.output_dir.is_absolute() {
            self.output_dir.clone()
        } else {
            self.base_dir.join(&self.output_dir)
        }
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        let digest = Sha256::digest(json.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Outcome of one trained and evaluated (fold, lambda) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub fold: usize,
    pub lambda_index: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Validation objective of the selected iteration.
    pub validation: Objective,
    pub best_iteration: usize,
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub report: FairnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub fold: usize,
    pub lambda_index: usize,
    pub lambda: f64,
    pub error: String,
}

/// Mean and SD of one metric over the folds where it is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub lambda_index: usize,
    pub lambda: f64,
    pub group: String,
    pub metric: String,
    #[serde(with = "metrics::undefined")]
    pub mean: Option<f64>,
    #[serde(with = "metrics::undefined")]
    pub sd: Option<f64>,
    /// Folds contributing a defined value.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: String,
    pub criterion: Criterion,
    pub distance: Distance,
    pub lambdas: Vec<f64>,
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
    pub summary: Vec<SummaryRow>,
}

impl SweepResult {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn cell(&self, fold: usize, lambda_index: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.fold == fold && c.lambda_index == lambda_index)
    }

    /// Mean of `metric` for `group` at `lambda_index`.
    pub fn summary_mean(&self, lambda_index: usize, group: &str, metric: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.lambda_index == lambda_index && r.group == group && r.metric == metric)
            .and_then(|r| r.mean)
    }
}

/// Row label of the cohort-level row in report tables.
pub const ALL_GROUPS: &str = "__all__";

pub const META_COLUMNS: [&str; 8] = [
    "fold",
    "lambda_index",
    "lambda",
    "criterion",
    "distance",
    "bandwidth",
    "seed",
    "group",
];

pub const METRIC_COLUMNS: [&str; 26] = [
    "count",
    "positives",
    "auroc",
    "average_precision",
    "ce_loss",
    "ace",
    "ace_signed",
    "rce",
    "rce_signed",
    "xauc_positive",
    "xauc_negative",
    "emd_all",
    "emd_positive",
    "emd_negative",
    "mean_all",
    "mean_positive",
    "mean_negative",
    "m_dp_emd",
    "m_eqopp_emd",
    "m_eqodds_emd",
    "m_dp_mean",
    "m_eqopp_mean",
    "m_eqodds_mean",
    "validation_objective",
    "validation_cross_entropy",
    "validation_penalty",
];

/// One line of `report.csv`: a group (or [`ALL_GROUPS`]) in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub fold: usize,
    pub lambda_index: usize,
    pub lambda: f64,
    pub criterion: String,
    pub distance: String,
    pub bandwidth: String,
    pub seed: u64,
    pub group: String,
    /// Aligned with [`METRIC_COLUMNS`].
    pub metrics: Vec<Option<f64>>,
}

fn cell_rows(cell: &CellResult, criterion: Criterion, distance: Distance, bandwidth: &str) -> Vec<ReportRow> {
    let r = &cell.report;
    let meta = |group: &str, metrics: Vec<Option<f64>>| ReportRow {
        fold: cell.fold,
        lambda_index: cell.lambda_index,
        lambda: cell.lambda,
        criterion: criterion.to_string(),
        distance: distance.to_string(),
        bandwidth: bandwidth.to_string(),
        seed: cell.seed,
        group: group.to_string(),
        metrics,
    };
    let mut rows = Vec::with_capacity(r.groups.len() + 1);
    for g in &r.groups {
        let mut m = vec![
            Some(g.count as f64),
            Some(g.positives as f64),
            g.auroc,
            g.average_precision,
            g.ce_loss,
            g.ace,
            g.ace_signed,
            g.rce,
            g.rce_signed,
            g.xauc_positive,
            g.xauc_negative,
            g.emd_all,
            g.emd_positive,
            g.emd_negative,
            g.mean_all,
            g.mean_positive,
            g.mean_negative,
        ];
        m.resize(METRIC_COLUMNS.len(), None);
        rows.push(meta(&g.group, m));
    }
    let o = &r.overall;
    let mut m = vec![
        Some(o.count as f64),
        Some(o.positives as f64),
        o.auroc,
        o.average_precision,
        o.ce_loss,
        o.ace,
        o.ace_signed,
    ];
    m.resize(17, None);
    m.extend([
        r.emd.demographic_parity,
        r.emd.equal_opportunity,
        r.emd.equalized_odds,
        r.mean.demographic_parity,
        r.mean.equal_opportunity,
        r.mean.equalized_odds,
        Some(cell.validation.total),
        Some(cell.validation.cross_entropy),
        Some(cell.validation.penalty),
    ]);
    rows.push(meta(ALL_GROUPS, m));
    rows
}

/// Per (lambda, group, metric) mean and SD across folds. SD uses the
/// `n - 1` denominator and is 0 for a single defined value.
pub fn aggregate_rows(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<String> = Vec::new();
    for row in rows {
        if !groups.contains(&row.group) {
            groups.push(row.group.clone());
        }
    }
    let mut by_key: BTreeMap<(usize, usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    let mut lambdas: BTreeMap<usize, f64> = BTreeMap::new();
    for row in rows {
        let g = groups.iter().position(|x| *x == row.group).unwrap();
        lambdas.insert(row.lambda_index, row.lambda);
        for (m, value) in row.metrics.iter().enumerate() {
            let entry = by_key.entry((row.lambda_index, g, m)).or_default();
            if let Some(v) = value {
                entry.push((row.fold, *v));
            }
        }
    }
    by_key
        .into_iter()
        .filter(|((_, g, m), values)| !values.is_empty() || rows.iter().any(|r| r.group == groups[*g] && *m < r.metrics.len()))
        .map(|((lambda_index, g, m), mut values)| {
            values.sort_by_key(|a| a.0);
            let n = values.len();
            let (mean, sd) = if n == 0 {
                (None, None)
            } else {
                let mean = values.iter().map(|v| v.1).sum::<f64>() / n as f64;
                let sd = if n < 2 {
                    0.0
                } else {
                    (values.iter().map(|v| (v.1 - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                };
                (Some(mean), Some(sd))
            };
            SummaryRow {
                lambda_index,
                lambda: lambdas[&lambda_index],
                group: groups[g].clone(),
                metric: METRIC_COLUMNS[m].to_string(),
                mean,
                sd,
                count: n,
            }
        })
        .collect()
}

fn cell_name(fold: usize, lambda_index: usize) -> String {
    format!("fold{fold}_lambda{lambda_index}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub split_seed: u64,
    pub train_seeds: Vec<u64>,
    pub library_version: String,
    pub config: ExperimentConfig,
}

struct SweepContext<'a> {
    config: &'a ExperimentConfig,
    cohort: &'a Cohort,
    split: &'a SplitPlan,
    x: SparseMatrix,
    outcomes: Vec<u8>,
    groups: Vec<usize>,
    hp: Hyperparameters,
    cells_dir: PathBuf,
    models_dir: PathBuf,
}

impl SweepContext<'_> {
    fn run_cell(&self, fold: usize, lambda_index: usize, lambda: f64) -> Result<CellResult> {
        let path = self.cells_dir.join(cell_name(fold, lambda_index));
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            if let Ok(cell) = serde_json::from_str::<CellResult>(&text) {
                return Ok(cell);
            }
            log::warn!("ignoring unreadable cell file {}", path.display());
        }
        let penalty = self.config.penalty.config(lambda);
        let seed = self.config.train_seed(fold);
        let (validation, test) = {
            let p = self.split.partition(self.cohort, fold)?;
            let data = TrainingData {
                x: &self.x,
                outcomes: &self.outcomes,
                groups: &self.groups,
                num_groups: self.cohort.num_groups(),
            };
            let (params, log) = model::train_rows(data, &p.train, &p.validation, &self.hp, &penalty, seed)?;
            let best = log
                .best()
                .ok_or_else(|| Error::InsufficientData("training produced no iterations".into()))?
                .validation;
            let predictions = model::predict(&params, &self.x, &p.test)?;
            let checkpoint = Checkpoint::new(self.hp, penalty, params, log);
            checkpoint.save(self.models_dir.join(cell_name(fold, lambda_index)))?;
            ((best, checkpoint.log), (p.test, predictions))
        };
        let meta = ReportMeta {
            lambda,
            penalty: Some(penalty),
            fold: Some(fold),
            seed: Some(seed),
        };
        let report = metrics::evaluate(self.cohort, &test.0, &test.1, meta)?;
        let cell = CellResult {
            fold,
            lambda_index,
            lambda,
            seed,
            validation: validation.0,
            best_iteration: validation.1.best_iteration,
            iterations_run: validation.1.iterations.len(),
            stopped_early: validation.1.stopped_early,
            report,
        };
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string(&cell)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(cell)
    }
}

/// Runs (or resumes) a full sweep and writes its reports.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let cohort = config.cohort.load(&config.base_dir)?;
    run_sweep_on(config, &cohort)
}

/// [`run_sweep`] on an already loaded cohort.
pub fn run_sweep_on(config: &ExperimentConfig, cohort: &Cohort) -> Result<SweepResult> {
    config.validate()?;
    let hp = config.model.resolve()?;
    let lambdas = config.lambdas()?;
    let split = cohort::make_split(cohort, config.protocol.test_fraction, config.protocol.folds, config.split_seed())?;
    if split.test_ids.is_empty() {
        return Err(Error::InsufficientData("test set is empty".into()));
    }

    let out = config.output_dir();
    let cells_dir = out.join("cells");
    let models_dir = out.join("models");
    for dir in [&out, &cells_dir, &models_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let manifest = Manifest {
        name: config.name.clone(),
        config_hash: config.hash()?,
        seed: config.seed,
        split_seed: config.split_seed(),
        train_seeds: (0..config.protocol.folds).map(|f| config.train_seed(f)).collect(),
        library_version: crate::VERSION.into(),
        config: config.clone(),
    };
    let manifest_path = out.join("manifest.json");
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let previous: Manifest = serde_json::from_str(&text)?;
        if previous.config_hash != manifest.config_hash {
            return Err(Error::Config(format!(
                "{} holds results of a different configuration",
                out.display()
            )));
        }
    }
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| Error::io(&manifest_path, e))?;
    split.save(out.join("split.json"))?;

    let context = SweepContext {
        config,
        cohort,
        split: &split,
        x: SparseMatrix::from_cohort(cohort),
        outcomes: cohort.outcomes(),
        groups: cohort.groups(),
        hp,
        cells_dir,
        models_dir,
    };
    let jobs: Vec<(usize, usize, f64)> = (0..config.protocol.folds)
        .flat_map(|f| lambdas.iter().enumerate().map(move |(j, &l)| (f, j, l)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<CellResult>> =
        pool.install(|| jobs.par_iter().map(|&(f, j, l)| context.run_cell(f, j, l)).collect());

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for ((fold, lambda_index, lambda), outcome) in jobs.into_iter().zip(outcomes) {
        match outcome {
            Ok(cell) => cells.push(cell),
            Err(e) => {
                log::error!("cell fold {fold} lambda {lambda}: {e}");
                failures.push(CellFailure {
                    fold,
                    lambda_index,
                    lambda,
                    error: e.to_string(),
                });
            }
        }
    }
    let result = assemble(config, lambdas, cells, failures);
    emit_report(&result, ReportFormat::Csv, &out)?;
    emit_report(&result, ReportFormat::Json, &out)?;
    Ok(result)
}

fn assemble(config: &ExperimentConfig, lambdas: Vec<f64>, mut cells: Vec<CellResult>, failures: Vec<CellFailure>) -> SweepResult {
    cells.sort_by_key(|c| (c.lambda_index, c.fold));
    let mut result = SweepResult {
        name: config.name.clone(),
        criterion: config.penalty.criterion,
        distance: config.penalty.distance,
        lambdas,
        cells,
        failures,
        summary: Vec::new(),
    };
    result.summary = aggregate_rows(&report_rows(&result, &config.penalty.bandwidth.to_string()));
    result
}

/// Rebuilds a sweep result from the cell files of a run directory.
pub fn load_sweep(dir: impl AsRef<Path>) -> Result<SweepResult> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let config = manifest.config;
    let lambdas = config.lambdas()?;
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for fold in 0..config.protocol.folds {
        for (j, &lambda) in lambdas.iter().enumerate() {
            let path = dir.join("cells").join(cell_name(fold, j));
            match fs::read_to_string(&path) {
                Ok(text) => cells.push(serde_json::from_str(&text)?),
                Err(_) => failures.push(CellFailure {
                    fold,
                    lambda_index: j,
                    lambda,
                    error: "missing cell output".into(),
                }),
            }
        }
    }
    Ok(assemble(&config, lambdas, cells, failures))
}

fn report_rows(result: &SweepResult, bandwidth: &str) -> Vec<ReportRow> {
    result
        .cells
        .iter()
        .flat_map(|c| cell_rows(c, result.criterion, result.distance, bandwidth))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

fn format_value(v: Option<f64>) -> String {
    v.map_or_else(|| metrics::UNDEFINED.to_string(), |x| x.to_string())
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let io_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{other:?}")),
    };
    let mut writer = csv::Writer::from_path(path).map_err(io_err)?;
    writer.write_record(header).map_err(io_err)?;
    for row in rows {
        writer.write_record(&row).map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Writes `report.csv` (one row per cell and group, plus one [`ALL_GROUPS`]
/// row per cell) and `summary.csv` (long format: lambda, group, metric,
/// mean, sd, count), or `report.json` with the full result.
pub fn emit_report(result: &SweepResult, format: ReportFormat, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match format {
        ReportFormat::Json => {
            let path = dir.join("report.json");
            fs::write(&path, serde_json::to_string_pretty(result)? + "\n").map_err(|e| Error::io(&path, e))?;
            Ok(vec![path])
        }
        ReportFormat::Csv => {
            let bandwidth = result
                .cells
                .first()
                .and_then(|c| c.report.meta.penalty)
                .map(|p| p.bandwidth.to_string())
                .unwrap_or_else(|| "median".into());
            let rows = report_rows(result, &bandwidth);
            let report_path = dir.join("report.csv");
            let header: Vec<&str> = META_COLUMNS.iter().chain(METRIC_COLUMNS.iter()).copied().collect();
            write_csv(
                &report_path,
                &header,
                rows.iter().map(|r| {
                    let mut fields = vec![
                        r.fold.to_string(),
                        r.lambda_index.to_string(),
                        r.lambda.to_string(),
                        r.criterion.clone(),
                        r.distance.clone(),
                        r.bandwidth.clone(),
                        r.seed.to_string(),
                        r.group.clone(),
                    ];
                    fields.extend(r.metrics.iter().map(|m| format_value(*m)));
                    fields
                }),
            )?;
            let summary_path = dir.join("summary.csv");
            write_csv(
                &summary_path,
                &["lambda_index", "lambda", "group", "metric", "mean", "sd", "count"],
                result.summary.iter().map(|s| {
                    vec![
                        s.lambda_index.to_string(),
                        s.lambda.to_string(),
                        s.group.clone(),
                        s.metric.clone(),
                        format_value(s.mean),
                        format_value(s.sd),
                        s.count.to_string(),
                    ]
                }),
            )?;
            Ok(vec![report_path, summary_path])
        }
    }
}

/// Parses a `report.csv` written by [`emit_report`].
pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Schema(e.to_string()))?;
    let header = reader.headers().map_err(|e| Error::Schema(e.to_string()))?.clone();
    let expected: Vec<&str> = META_COLUMNS.iter().chain(METRIC_COLUMNS.iter()).copied().collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Schema(format!("{} does not have the report column layout", path.display())));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let err = |message: String| Error::Parse { line, message };
        let num = |s: &str| -> Result<Option<f64>> {
            if s == metrics::UNDEFINED {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| err(format!("{s:?}: {e}")))
            }
        };
        rows.push(ReportRow {
            fold: record[0].parse().map_err(|e| err(format!("fold: {e}")))?,
            lambda_index: record[1].parse().map_err(|e| err(format!("lambda_index: {e}")))?,
            lambda: record[2].parse().map_err(|e| err(format!("lambda: {e}")))?,
            criterion: record[3].to_string(),
            distance: record[4].to_string(),
            bandwidth: record[5].to_string(),
            seed: record[6].parse().map_err(|e| err(format!("seed: {e}")))?,
            group: record[7].to_string(),
            metrics: (8..record.len()).map(|c| num(&record[c])).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

/// Result of evaluating one hyperparameter configuration in [`random_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub hyperparameters: Hyperparameters,
    /// Mean over folds of the selected iteration's validation cross-entropy.
    pub mean_validation_loss: f64,
}

/// Samples `num_configs` distinct grid configurations, trains each
/// unpenalized on every fold, and returns them sorted by mean validation
/// cross-entropy. `budget` optionally overrides `(max_iterations, batches_per_iteration)`.
pub fn random_search(
    cohort: &Cohort,
    split: &SplitPlan,
    num_configs: usize,
    budget: Option<(usize, usize)>,
    seed: u64,
    parallelism: usize,
) -> Result<Vec<SearchResult>> {
    let mut grid = Hyperparameters::full_grid();
    grid.shuffle(&mut util::rng(seed));
    grid.truncate(num_configs);
    if let Some((iterations, batches)) = budget {
        for hp in &mut grid {
            hp.max_iterations = iterations;
            hp.batches_per_iteration = batches;
        }
    }
    let x = SparseMatrix::from_cohort(cohort);
    let outcomes = cohort.outcomes();
    let groups = cohort.groups();
    let data = TrainingData {
        x: &x,
        outcomes: &outcomes,
        groups: &groups,
        num_groups: cohort.num_groups(),
    };
    let partitions = (0..split.num_folds())
        .map(|f| split.partition(cohort, f))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut results = pool.install(|| {
        grid.par_iter()
            .map(|hp| {
                let mut total = 0.0;
                for (f, p) in partitions.iter().enumerate() {
                    let (_, log) = model::train_rows(
                        data,
                        &p.train,
                        &p.validation,
                        hp,
                        &PenaltyConfig::none(),
                        util::mix_seed(seed, f as u64 + 1),
                    )?;
                    total += log.best().map_or(f64::INFINITY, |b| b.validation.cross_entropy);
                }
                Ok(SearchResult {
                    hyperparameters: *hp,
                    mean_validation_loss: total / partitions.len() as f64,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    results.sort_by(|a, b| a.mean_validation_loss.total_cmp(&b.mean_validation_loss));
    Ok(results)
}
