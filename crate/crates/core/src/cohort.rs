//! Labeled, group-annotated cohorts.
//!
//! A [`Cohort`] is a list of [`CohortRecord`]s sharing one [`GroupAttribute`]
//! and one binary feature vocabulary. Cohorts are stored as line-delimited
//! text:
//!
//! ```text
//! #fairrisk-cohort v1  attribute=race_eth  vocab_size=120  groups=Asian,Black,White
//! <record_id>  <group label>  <outcome 0|1>  <true probability or ->  <idx:1 idx:1 ...>
//! ```
//!
//! Fields are tab separated. The header is mandatory; `groups=` is optional
//! when the caller supplies the attribute. Feature pairs are separated by
//! single spaces, indices are strictly below `vocab_size`, and every value is
//! `1`. Blank lines are ignored.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{self, sigmoid};

const HEADER_TAG: &str = "#fairrisk-cohort";
const FORMAT_VERSION: &str = "v1";

/// A categorical sensitive attribute with `K >= 2` ordered, unique labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAttribute {
    pub name: String,
    pub group_names: Vec<String>,
}

impl GroupAttribute {
    pub fn new(name: impl Into<String>, group_names: Vec<String>) -> Result<Self> {
        let attribute = GroupAttribute {
            name: name.into(),
            group_names,
        };
        attribute.validate()?;
        Ok(attribute)
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_names.len() < 2 {
            return Err(Error::Schema(format!(
                "attribute '{}' needs at least two groups",
                self.name
            )));
        }
        let mut seen = HashSet::new();
        for label in &self.group_names {
            if label.is_empty() || label.contains(['\t', ',', '\n']) {
                return Err(Error::Schema(format!("invalid group label {label:?}")));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::Schema(format!("duplicate group label '{label}'")));
            }
        }
        Ok(())
    }

    /// Number of groups `K`.
    pub fn num_groups(&self) -> usize {
        self.group_names.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.group_names.iter().position(|g| g == label)
    }
}

/// One subject: sparse binary features, outcome and group index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub record_id: String,
    /// Indices of features equal to 1, sorted and unique.
    pub features: Vec<u32>,
    pub outcome: u8,
    pub group: usize,
    /// Generating probability `P(y = 1 | x)`, present for synthetic records.
    pub true_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub attribute: GroupAttribute,
    pub vocab_size: usize,
    pub records: Vec<CohortRecord>,
}

impl Cohort {
    /// Builds a cohort, normalizing feature lists and checking every record invariant.
    pub fn new(
        attribute: GroupAttribute,
        vocab_size: usize,
        mut records: Vec<CohortRecord>,
    ) -> Result<Self> {
        attribute.validate()?;
        let mut ids = HashSet::with_capacity(records.len());
        for record in &mut records {
            record.features.sort_unstable();
            record.features.dedup();
            check_record(record, attribute.num_groups(), vocab_size)?;
            if !ids.insert(record.record_id.clone()) {
                return Err(Error::Schema(format!(
                    "duplicate record id '{}'",
                    record.record_id
                )));
            }
        }
        Ok(Cohort {
            attribute,
            vocab_size,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.attribute.num_groups()
    }

    pub fn outcomes(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.outcome).collect()
    }

    pub fn groups(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.group).collect()
    }

    /// Map from record id to position in `records`.
    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.record_id.as_str(), i))
            .collect()
    }

    /// Serializes the cohort in the line-delimited format described in the module docs.
    pub fn to_writer<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "{HEADER_TAG} {FORMAT_VERSION}\tattribute={}\tvocab_size={}\tgroups={}",
            self.attribute.name,
            self.vocab_size,
            self.attribute.group_names.join(",")
        )?;
        let mut line = String::new();
        for record in &self.records {
            line.clear();
            let _ = write!(
                line,
                "{}\t{}\t{}\t",
                record.record_id, self.attribute.group_names[record.group], record.outcome
            );
            match record.true_probability {
                Some(p) => {
                    let _ = write!(line, "{p}");
                }
                None => line.push('-'),
            }
            line.push('\t');
            for (i, idx) in record.features.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{idx}:1");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = std::io::BufWriter::new(file);
        self.to_writer(&mut writer)
            .and_then(|_| writer.flush())
            .map_err(|e| Error::io(path, e))
    }
}

fn check_record(record: &CohortRecord, num_groups: usize, vocab_size: usize) -> Result<()> {
    let id = &record.record_id;
    if id.is_empty() || id.contains(['\t', '\n']) {
        return Err(Error::Schema(format!("invalid record id {id:?}")));
    }
    if record.outcome > 1 {
        return Err(Error::Schema(format!(
            "record '{id}': outcome {} is not 0 or 1",
            record.outcome
        )));
    }
    if record.group >= num_groups {
        return Err(Error::Schema(format!(
            "record '{id}': group index {} out of range for {num_groups} groups",
            record.group
        )));
    }
    if let Some(&max) = record.features.last() {
        if max as usize >= vocab_size {
            return Err(Error::Schema(format!(
                "record '{id}': feature index {max} exceeds vocabulary size {vocab_size}"
            )));
        }
    }
    if let Some(p) = record.true_probability {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Schema(format!(
                "record '{id}': true probability {p} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Header fields of a cohort file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortHeader {
    pub attribute: String,
    pub vocab_size: usize,
    pub groups: Option<Vec<String>>,
}

fn parse_header(line: &str) -> Result<CohortHeader> {
    let err = |message: String| Error::Parse { line: 1, message };
    let mut fields = line.split('\t');
    let tag = fields.next().unwrap_or_default();
    if tag != format!("{HEADER_TAG} {FORMAT_VERSION}") {
        return Err(err(format!(
            "expected header '{HEADER_TAG} {FORMAT_VERSION}', found {tag:?}"
        )));
    }
    let mut attribute = None;
    let mut vocab_size = None;
    let mut groups = None;
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| err(format!("header field {field:?} is not key=value")))?;
        match key {
            "attribute" => attribute = Some(value.to_string()),
            "vocab_size" => {
                vocab_size = Some(
                    value
                        .parse::<usize>()
                        .map_err(|e| err(format!("vocab_size: {e}")))?,
                )
            }
            "groups" => groups = Some(value.split(',').map(str::to_string).collect()),
            other => return Err(err(format!("unknown header key '{other}'"))),
        }
    }
    Ok(CohortHeader {
        attribute: attribute.ok_or_else(|| err("header lacks attribute=".into()))?,
        vocab_size: vocab_size.ok_or_else(|| err("header lacks vocab_size=".into()))?,
        groups,
    })
}

fn parse_record(
    line: &str,
    line_no: usize,
    attribute: &GroupAttribute,
    vocab_size: usize,
) -> Result<CohortRecord> {
    let err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(err(format!("expected 5 tab-separated fields, found {}", fields.len())));
    }
    let record_id = fields[0].to_string();
    let group = attribute.index_of(fields[1]).ok_or_else(|| {
        Error::Schema(format!(
            "line {line_no}, record '{record_id}': unknown group label '{}' for attribute '{}'",
            fields[1], attribute.name
        ))
    })?;
    let outcome = match fields[2] {
        "0" => 0,
        "1" => 1,
        other => {
            return Err(err(format!(
                "record '{record_id}': outcome {other:?} is not 0 or 1"
            )))
        }
    };
    let true_probability = match fields[3] {
        "-" => None,
        s => Some(
            s.parse::<f64>()
                .map_err(|e| err(format!("record '{record_id}': true probability: {e}")))?,
        ),
    };
    let mut features = Vec::new();
    for pair in fields[4].split(' ').filter(|s| !s.is_empty()) {
        let (idx, value) = pair
            .split_once(':')
            .ok_or_else(|| err(format!("record '{record_id}': feature {pair:?} is not index:value")))?;
        if value != "1" {
            return Err(err(format!(
                "record '{record_id}': feature value must be 1, found {value:?}"
            )));
        }
        let idx: u32 = idx
            .parse()
            .map_err(|e| err(format!("record '{record_id}': feature index: {e}")))?;
        features.push(idx);
    }
    let record = CohortRecord {
        record_id,
        features,
        outcome,
        group,
        true_probability,
    };
    let mut normalized = record;
    normalized.features.sort_unstable();
    normalized.features.dedup();
    check_record(&normalized, attribute.num_groups(), vocab_size).map_err(|e| match e {
        Error::Schema(message) => Error::Schema(format!("line {line_no}: {message}")),
        other => other,
    })?;
    Ok(normalized)
}

/// Reads a cohort. When `attribute` is `None` the group labels come from the header.
pub fn read_cohort<R: BufRead>(reader: R, attribute: Option<&GroupAttribute>) -> Result<Cohort> {
    let mut lines = reader.lines();
    let header_line = match lines.next() {
        Some(line) => line.map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty cohort file".into(),
            })
        }
    };
    let header = parse_header(header_line.trim_end_matches('\r'))?;
    let attribute = match attribute {
        Some(attr) => {
            if attr.name != header.attribute {
                return Err(Error::Schema(format!(
                    "file declares attribute '{}' but '{}' was requested",
                    header.attribute, attr.name
                )));
            }
            attr.clone()
        }
        None => {
            let groups = header.groups.clone().ok_or_else(|| {
                Error::Schema("header has no groups= and no attribute was supplied".into())
            })?;
            GroupAttribute::new(header.attribute.clone(), groups)?
        }
    };
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(line, line_no, &attribute, header.vocab_size)?);
    }
    Cohort::new(attribute, header.vocab_size, records)
}

/// Loads a cohort file, mapping group labels to indices in `attribute` order.
pub fn load_cohort(path: impl AsRef<Path>, attribute: &GroupAttribute) -> Result<Cohort> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cohort(BufReader::new(file), Some(attribute))
}

/// Loads a cohort file whose header lists its group labels.
pub fn load_cohort_self_described(path: impl AsRef<Path>) -> Result<Cohort> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cohort(BufReader::new(file), None)
}

/// Held-out test ids plus `F` disjoint folds covering the remaining records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub test_fraction: f64,
    pub test_ids: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

/// Record positions for one fold of a [`SplitPlan`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits a cohort into a test set of `round(n * test_fraction)` records and
/// `folds` folds over the rest. Fold sizes differ by at most one, with the
/// larger folds first.
pub fn make_split(
    cohort: &Cohort,
    test_fraction: f64,
    folds: usize,
    seed: u64,
) -> Result<SplitPlan> {
    let ids: Vec<String> = cohort.records.iter().map(|r| r.record_id.clone()).collect();
    split_ids(&ids, test_fraction, folds, seed)
}

/// Id-level split used by [`make_split`] and by feature extraction, which
/// must split before a cohort exists.
pub fn split_ids(ids: &[String], test_fraction: f64, folds: usize, seed: u64) -> Result<SplitPlan> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if folds == 0 {
        return Err(Error::Parameter("folds must be at least 1".into()));
    }
    let n = ids.len();
    if n < folds + 1 {
        return Err(Error::InsufficientData(format!(
            "{n} records cannot fill {folds} folds and a test set"
        )));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    let remaining = n - n_test;
    if remaining < folds {
        return Err(Error::InsufficientData(format!(
            "{remaining} records left after the test set cannot fill {folds} folds"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut util::rng(seed));

    let test_ids = order[..n_test].iter().map(|&i| ids[i].clone()).collect();
    let base = remaining / folds;
    let extra = remaining % folds;
    let mut fold_ids = Vec::with_capacity(folds);
    let mut start = n_test;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        fold_ids.push(order[start..start + size].iter().map(|&i| ids[i].clone()).collect());
        start += size;
    }
    Ok(SplitPlan {
        seed,
        test_fraction,
        test_ids,
        folds: fold_ids,
    })
}

impl SplitPlan {
    pub fn num_folds(&self) -> usize {
        self.folds.len()
    }

    /// Resolves fold `fold` into record positions of `cohort`.
    ///
    /// With two or more folds, fold `fold` is the validation set and the other
    /// folds form the training set. With a single fold, the last tenth of that
    /// fold (at least one record) is held out for validation.
    pub fn partition(&self, cohort: &Cohort, fold: usize) -> Result<Partition> {
        if fold >= self.folds.len() {
            return Err(Error::Parameter(format!(
                "fold index {fold} out of range for {} folds",
                self.folds.len()
            )));
        }
        let index = cohort.id_index();
        let resolve = |ids: &[String]| -> Result<Vec<usize>> {
            ids.iter()
                .map(|id| {
                    index.get(id.as_str()).copied().ok_or_else(|| {
                        Error::Schema(format!("split references unknown record id '{id}'"))
                    })
                })
                .collect()
        };
        let test = resolve(&self.test_ids)?;
        let (train, validation) = if self.folds.len() == 1 {
            let all = resolve(&self.folds[0])?;
            let n_val = ((all.len() as f64 / 10.0).round() as usize).max(1);
            let cut = all.len().saturating_sub(n_val);
            (all[..cut].to_vec(), all[cut..].to_vec())
        } else {
            let mut train = Vec::new();
            for (f, ids) in self.folds.iter().enumerate() {
                if f != fold {
                    train.extend(resolve(ids)?);
                }
            }
            (train, resolve(&self.folds[fold])?)
        };
        Ok(Partition {
            train,
            validation,
            test,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Parameters of the synthetic cohort generator.
///
/// Each record draws its group from `group_weights`, then `n_features`
/// independent Bernoulli(`feature_density`) features, then
/// `y ~ Bernoulli(sigmoid(coefficients[a] . x + intercepts[a]))`. With
/// `encode_group` the one-hot group indicator is appended after the base
/// features so a model can see group membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub attribute: GroupAttribute,
    pub group_weights: Vec<f64>,
    pub coefficients: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub n_features: usize,
    pub feature_density: f64,
    #[serde(default)]
    pub encode_group: bool,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        self.attribute.validate()?;
        let k = self.attribute.num_groups();
        if self.n == 0 || self.n_features == 0 {
            return Err(Error::Parameter("n and n_features must be positive".into()));
        }
        if self.group_weights.len() != k || self.intercepts.len() != k || self.coefficients.len() != k {
            return Err(Error::Parameter(format!(
                "group_weights, intercepts and coefficients need one entry per group ({k})"
            )));
        }
        if self.group_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Parameter("group weights must be nonnegative".into()));
        }
        let total: f64 = self.group_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!("group weights sum to {total}, not 1")));
        }
        if let Some(bad) = self.coefficients.iter().find(|c| c.len() != self.n_features) {
            return Err(Error::Parameter(format!(
                "coefficient vector of length {} does not match n_features {}",
                bad.len(),
                self.n_features
            )));
        }
        if !(self.feature_density > 0.0 && self.feature_density <= 1.0) {
            return Err(Error::Parameter("feature_density must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.n_features + if self.encode_group { self.attribute.num_groups() } else { 0 }
    }

    /// Two-group cohort with base rates 0.10 and 0.30, shared feature
    /// effects, and group membership visible to the model.
    pub fn canonical(n: usize, seed: u64) -> Self {
        let n_features = 20;
        let coefficients: Vec<f64> = (0..n_features)
            .map(|j| match j {
                0..=4 => 1.0,
                5..=9 => -1.0,
                10..=14 => 0.5,
                _ => 0.0,
            })
            .collect();
        let mut spec = SyntheticSpec {
            n,
            attribute: GroupAttribute {
                name: "group".into(),
                group_names: vec!["A".into(), "B".into()],
            },
            group_weights: vec![0.5, 0.5],
            coefficients: vec![coefficients.clone(), coefficients],
            intercepts: vec![0.0, 0.0],
            n_features,
            feature_density: 0.3,
            encode_group: true,
            seed,
        };
        spec.intercepts = spec.intercepts_for_base_rates(&[0.10, 0.30]);
        spec
    }

    /// Solves, per group, for the intercept whose expected outcome rate under
    /// the feature distribution equals `rates[k]`. Expectations use a fixed
    /// Monte Carlo sample so the result does not depend on `seed`.
    pub fn intercepts_for_base_rates(&self, rates: &[f64]) -> Vec<f64> {
        let mut rng = util::rng(0x5eed_ba5e);
        let draws = 20_000;
        let sample: Vec<Vec<bool>> = (0..draws)
            .map(|_| {
                (0..self.n_features)
                    .map(|_| rng.gen::<f64>() < self.feature_density)
                    .collect()
            })
            .collect();
        rates
            .iter()
            .zip(&self.coefficients)
            .map(|(&rate, coef)| {
                let scores: Vec<f64> = sample
                    .iter()
                    .map(|x| x.iter().zip(coef).filter(|(on, _)| **on).map(|(_, w)| w).sum())
                    .collect();
                let expected = |b: f64| {
                    scores.iter().map(|s| sigmoid(s + b)).sum::<f64>() / scores.len() as f64
                };
                let (mut lo, mut hi) = (-30.0, 30.0);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if expected(mid) < rate {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect()
    }
}

/// Draws a synthetic cohort; deterministic given `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = util::rng(spec.seed);
    let k = spec.attribute.num_groups();
    let mut cumulative = Vec::with_capacity(k);
    let mut acc = 0.0;
    for w in &spec.group_weights {
        acc += w;
        cumulative.push(acc);
    }
    let width = spec.n.to_string().len();
    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let u: f64 = rng.gen();
        let group = cumulative.iter().position(|&c| u < c).unwrap_or(k - 1);
        let mut features = Vec::new();
        let mut score = spec.intercepts[group];
        for j in 0..spec.n_features {
            if rng.gen::<f64>() < spec.feature_density {
                features.push(j as u32);
                score += spec.coefficients[group][j];
            }
        }
        if spec.encode_group {
            features.push((spec.n_features + group) as u32);
        }
        let p = sigmoid(score);
        let outcome = u8::from(rng.gen::<f64>() < p);
        records.push(CohortRecord {
            record_id: format!("s{i:0width$}"),
            features,
            outcome,
            group,
            true_probability: Some(p),
        });
    }
    Cohort::new(spec.attribute.clone(), spec.vocab_size(), records)
}

/// Count and outcome incidence of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupIncidence {
    pub group: String,
    pub count: usize,
    pub positives: usize,
    /// `None` for an empty group.
    pub incidence: Option<f64>,
}

pub fn incidence_table(cohort: &Cohort) -> Result<Vec<GroupIncidence>> {
    if cohort.is_empty() {
        return Err(Error::InsufficientData("incidence table of an empty cohort".into()));
    }
    let k = cohort.num_groups();
    let mut counts = vec![0usize; k];
    let mut positives = vec![0usize; k];
    for record in &cohort.records {
        counts[record.group] += 1;
        positives[record.group] += record.outcome as usize;
    }
    Ok(cohort
        .attribute
        .group_names
        .iter()
        .enumerate()
        .map(|(g, name)| GroupIncidence {
            group: name.clone(),
            count: counts[g],
            positives: positives[g],
            incidence: (counts[g] > 0).then(|| positives[g] as f64 / counts[g] as f64),
        })
        .collect())
}

/// Folds every group with fewer than `min_positives` positive outcomes into
/// the group labeled `target`, appending that label if it is new. Returns the
/// cohort unchanged when no group qualifies.
pub fn merge_rare_groups(cohort: &Cohort, min_positives: usize, target: &str) -> Result<Cohort> {
    let table = incidence_table(cohort)?;
    let rare: Vec<bool> = table
        .iter()
        .map(|row| row.group != target && row.positives < min_positives)
        .collect();
    if !rare.iter().any(|&r| r) {
        return Ok(cohort.clone());
    }
    let mut names: Vec<String> = Vec::new();
    let mut remap = vec![usize::MAX; rare.len()];
    for (g, name) in cohort.attribute.group_names.iter().enumerate() {
        if !rare[g] {
            remap[g] = names.len();
            names.push(name.clone());
        }
    }
    let target_index = match names.iter().position(|n| n == target) {
        Some(i) => i,
        None => {
            names.push(target.to_string());
            names.len() - 1
        }
    };
    for (g, r) in rare.iter().enumerate() {
        if *r {
            remap[g] = target_index;
        }
    }
    let attribute = GroupAttribute::new(cohort.attribute.name.clone(), names)?;
    let records = cohort
        .records
        .iter()
        .map(|r| CohortRecord {
            group: remap[r.group],
            ..r.clone()
        })
        .collect();
    Cohort::new(attribute, cohort.vocab_size, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr() -> GroupAttribute {
        GroupAttribute::new("sex", vec!["F".into(), "M".into()]).unwrap()
    }

    fn parse(text: &str) -> Result<Cohort> {
        read_cohort(text.as_bytes(), Some(&attr()))
    }

    #[test]
    fn reads_three_rows() {
        let text = "#fairrisk-cohort v1\tattribute=sex\tvocab_size=10\n\
                    a\tF\t1\t-\t0:1 3:1\n\
                    b\tM\t0\t-\t\n\
                    c\tF\t0\t0.25\t9:1\n";
        let cohort = parse(text).unwrap();
        assert_eq!(cohort.len(), 3);
        assert_eq!(cohort.records[0].features, vec![0, 3]);
        assert_eq!(cohort.records[1].group, 1);
        assert!(cohort.records[1].features.is_empty());
        assert_eq!(cohort.records[2].true_probability, Some(0.25));
    }

    #[test]
    fn outcome_two_names_the_record() {
        let text = "#fairrisk-cohort v1\tattribute=sex\tvocab_size=10\n\
                    ok\tF\t1\t-\t\n\
                    bad7\tF\t2\t-\t1:1\n";
        let err = parse(text).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("bad7"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_group_is_schema_error() {
        let text = "#fairrisk-cohort v1\tattribute=sex\tvocab_size=10\nx\tU\t0\t-\t\n";
        assert!(matches!(parse(text), Err(Error::Schema(_))));
    }

    #[test]
    fn out_of_vocabulary_feature_rejected() {
        let text = "#fairrisk-cohort v1\tattribute=sex\tvocab_size=4\nx\tF\t0\t-\t4:1\n";
        assert!(matches!(parse(text), Err(Error::Schema(_))));
    }

    #[test]
    fn wrong_attribute_rejected() {
        let text = "#fairrisk-cohort v1\tattribute=age\tvocab_size=4\n";
        assert!(matches!(parse(text), Err(Error::Schema(_))));
    }

    #[test]
    fn non_unit_feature_value_rejected() {
        let text = "#fairrisk-cohort v1\tattribute=sex\tvocab_size=4\nx\tF\t0\t-\t1:2\n";
        assert!(matches!(parse(text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn attribute_needs_two_unique_groups() {
        assert!(GroupAttribute::new("a", vec!["x".into()]).is_err());
        assert!(GroupAttribute::new("a", vec!["x".into(), "x".into()]).is_err());
    }

    #[test]
    fn split_of_one_hundred() {
        let ids: Vec<String> = (0..100).map(|i| format!("r{i}")).collect();
        let plan = split_ids(&ids, 0.1, 10, 7).unwrap();
        assert_eq!(plan.test_ids.len(), 10);
        assert!(plan.folds.iter().all(|f| f.len() == 9));
        assert_eq!(plan, split_ids(&ids, 0.1, 10, 7).unwrap());
        assert_ne!(plan, split_ids(&ids, 0.1, 10, 8).unwrap());
    }

    #[test]
    fn split_of_ninety_five() {
        // round(9.5) = 10 test ids; the 85 left give five folds of 9 then five of 8.
        let ids: Vec<String> = (0..95).map(|i| format!("r{i}")).collect();
        let plan = split_ids(&ids, 0.1, 10, 3).unwrap();
        let n_test = (95.0_f64 * 0.1).round() as usize;
        assert_eq!(plan.test_ids.len(), n_test);
        let expected: Vec<usize> = (0..10).map(|f| (95 - n_test) / 10 + usize::from(f < (95 - n_test) % 10)).collect();
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, expected);
        assert_eq!(sizes.iter().sum::<usize>() + plan.test_ids.len(), 95);
        assert!(sizes.iter().all(|s| (8..=9).contains(s)));
    }

    #[test]
    fn split_needs_enough_records() {
        let ids: Vec<String> = (0..10).map(|i| format!("r{i}")).collect();
        assert!(matches!(split_ids(&ids, 0.1, 10, 0), Err(Error::InsufficientData(_))));
        assert!(matches!(split_ids(&ids, 0.0, 2, 0), Err(Error::Parameter(_))));
        assert!(matches!(split_ids(&ids, 0.1, 0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn single_fold_partition_holds_out_a_tenth() {
        let attribute = attr();
        let records = (0..50)
            .map(|i| CohortRecord {
                record_id: format!("r{i}"),
                features: vec![],
                outcome: (i % 2) as u8,
                group: i % 2,
                true_probability: None,
            })
            .collect();
        let cohort = Cohort::new(attribute, 1, records).unwrap();
        let plan = make_split(&cohort, 0.1, 1, 1).unwrap();
        let part = plan.partition(&cohort, 0).unwrap();
        assert_eq!(part.test.len(), 5);
        assert_eq!(part.validation.len(), 5);
        assert_eq!(part.train.len(), 40);
        assert!(plan.partition(&cohort, 1).is_err());
    }

    #[test]
    fn toy_incidence() {
        let records = [(0, 1), (0, 0), (1, 0), (1, 0)]
            .iter()
            .enumerate()
            .map(|(i, &(g, y))| CohortRecord {
                record_id: format!("r{i}"),
                features: vec![],
                outcome: y,
                group: g,
                true_probability: None,
            })
            .collect();
        let cohort = Cohort::new(attr(), 1, records).unwrap();
        let table = incidence_table(&cohort).unwrap();
        assert_eq!(table[0].incidence, Some(0.5));
        assert_eq!(table[1].incidence, Some(0.0));
        assert_eq!(table[0].count + table[1].count, 4);
    }

    #[test]
    fn empty_group_incidence_is_undefined() {
        let records = vec![CohortRecord {
            record_id: "only".into(),
            features: vec![],
            outcome: 1,
            group: 0,
            true_probability: None,
        }];
        let cohort = Cohort::new(attr(), 1, records).unwrap();
        let table = incidence_table(&cohort).unwrap();
        assert_eq!(table[0].incidence, Some(1.0));
        assert_eq!(table[1].count, 0);
        assert_eq!(table[1].incidence, None);
    }

    #[test]
    fn rare_groups_merge_into_other() {
        let attribute =
            GroupAttribute::new("race", vec!["A".into(), "B".into(), "C".into()]).unwrap();
        let records = (0..30)
            .map(|i| CohortRecord {
                record_id: format!("r{i}"),
                features: vec![],
                outcome: u8::from(i % 3 != 2 || i < 3),
                group: i % 3,
                true_probability: None,
            })
            .collect();
        let cohort = Cohort::new(attribute, 1, records).unwrap();
        let merged = merge_rare_groups(&cohort, 2, "Other").unwrap();
        assert_eq!(merged.attribute.group_names, vec!["A", "B", "Other"]);
        assert_eq!(merged.records[2].group, 2);
        let unchanged = merge_rare_groups(&cohort, 1, "Other").unwrap();
        assert_eq!(unchanged, cohort);
    }

    #[test]
    fn synthetic_spec_validation() {
        let mut spec = SyntheticSpec::canonical(100, 1);
        spec.group_weights = vec![0.5, 0.6];
        assert!(generate_synthetic(&spec).is_err());
        let mut spec = SyntheticSpec::canonical(100, 1);
        spec.coefficients[1].pop();
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn canonical_intercepts_hit_base_rates() {
        let spec = SyntheticSpec::canonical(60_000, 11);
        let cohort = generate_synthetic(&spec).unwrap();
        let table = incidence_table(&cohort).unwrap();
        for (row, target) in table.iter().zip([0.10, 0.30]) {
            let n = row.count as f64;
            let bound = 3.0 * (target * (1.0 - target) / n).sqrt();
            let rate = row.incidence.unwrap();
            assert!((rate - target).abs() < bound + 0.005, "{rate} vs {target}");
        }
    }
}
