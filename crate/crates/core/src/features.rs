//! Binary features from longitudinal event timelines.
//!
//! Within each time interval relative to the index time, every observed
//! concept gets an occurrence flag. Numeric events additionally set
//! above/below reference-range flags, and a quintile-bin flag whose cut
//! points come from the training timelines only. Demographic concepts are
//! time-agnostic flags.
//!
//! Timeline files are tab separated:
//!
//! ```text
//! #fairrisk-timelines v1  attribute=sex
//! S  <record_id>  <group label>  <outcome 0|1>  <demographic concept ids, comma separated>
//! E  <record_id>  <concept id>  <hours from index>  <value or ->  <reference low or ->  <reference high or ->
//! ```
//!
//! Every `E` line must follow the `S` line of its record.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{self, Cohort, CohortRecord, GroupAttribute, SplitPlan};
use crate::error::{Error, Result};

/// Numeric observations a lab needs in an interval before it is binned.
pub const MIN_QUINTILE_OBSERVATIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub concept_id: u64,
    /// Hours relative to the index time; negative is before.
    pub timestamp: f64,
    pub numeric_value: Option<f64>,
    pub reference_low: Option<f64>,
    pub reference_high: Option<f64>,
}

impl Event {
    pub fn occurrence(concept_id: u64, timestamp: f64) -> Self {
        Event {
            concept_id,
            timestamp,
            numeric_value: None,
            reference_low: None,
            reference_high: None,
        }
    }

    pub fn measurement(concept_id: u64, timestamp: f64, value: f64, low: Option<f64>, high: Option<f64>) -> Self {
        Event {
            concept_id,
            timestamp,
            numeric_value: Some(value),
            reference_low: low,
            reference_high: high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub record_id: String,
    /// Sorted by timestamp.
    pub events: Vec<Event>,
    pub demographics: Vec<u64>,
}

impl Timeline {
    pub fn new(record_id: impl Into<String>, mut events: Vec<Event>, demographics: Vec<u64>) -> Result<Self> {
        for e in &events {
            if let (Some(lo), Some(hi)) = (e.reference_low, e.reference_high) {
                if lo > hi {
                    return Err(Error::Schema(format!(
                        "concept {}: reference low {lo} exceeds high {hi}",
                        e.concept_id
                    )));
                }
            }
        }
        events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        Ok(Timeline {
            record_id: record_id.into(),
            events,
            demographics,
        })
    }
}

/// Window `(lower, upper]` of hour offsets; `lower = None` is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub lower: Option<f64>,
    pub upper: f64,
}

impl Interval {
    pub fn new(name: impl Into<String>, lower: Option<f64>, upper: f64) -> Self {
        Interval {
            name: name.into(),
            lower,
            upper,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t <= self.upper && self.lower.is_none_or(|lo| t > lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSpec {
    pub intervals: Vec<Interval>,
}

impl IntervalSpec {
    pub fn new(intervals: Vec<Interval>) -> Result<Self> {
        let spec = IntervalSpec { intervals };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.intervals.is_empty() {
            return Err(Error::Config("interval spec is empty".into()));
        }
        for iv in &self.intervals {
            if let Some(lo) = iv.lower {
                if !(lo < iv.upper) {
                    return Err(Error::Config(format!("interval '{}' is empty", iv.name)));
                }
            }
        }
        Ok(())
    }

    /// Day-resolution windows: 1-29, 30-89, 90-179 and 180-364 days before
    /// the index time, plus any time before it.
    pub fn daily() -> Self {
        let d = |days: f64| -24.0 * days;
        IntervalSpec {
            intervals: vec![
                Interval::new("days_1_29", Some(d(30.0)), d(1.0)),
                Interval::new("days_30_89", Some(d(90.0)), d(30.0)),
                Interval::new("days_90_179", Some(d(180.0)), d(90.0)),
                Interval::new("days_180_364", Some(d(365.0)), d(180.0)),
                Interval::new("any_prior", None, 0.0),
            ],
        }
    }

    /// Hour-resolution windows over the week before the index time.
    pub fn hourly() -> Self {
        IntervalSpec {
            intervals: vec![
                Interval::new("hours_0_4", Some(-4.0), 0.0),
                Interval::new("hours_4_12", Some(-12.0), -4.0),
                Interval::new("hours_12_24", Some(-24.0), -12.0),
                Interval::new("hours_24_72", Some(-72.0), -24.0),
                Interval::new("hours_72_168", Some(-168.0), -72.0),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Occurrence,
    AboveRange,
    BelowRange,
    Quintile(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKey {
    Demographic(u64),
    Interval {
        interval: usize,
        concept: u64,
        kind: FeatureKind,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuintileCuts {
    pub interval: usize,
    pub concept: u64,
    pub cuts: [f64; 4],
}

/// Bijection between feature keys and dense indices, plus training quintile cuts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVocabulary {
    pub intervals: IntervalSpec,
    /// `keys[i]` is the key of feature index `i`.
    pub keys: Vec<FeatureKey>,
    pub quintiles: Vec<QuintileCuts>,
    #[serde(skip)]
    lookup: HashMap<FeatureKey, u32>,
    #[serde(skip)]
    cut_lookup: HashMap<(usize, u64), [f64; 4]>,
}

impl FeatureVocabulary {
    fn from_parts(intervals: IntervalSpec, keys: Vec<FeatureKey>, quintiles: Vec<QuintileCuts>) -> Self {
        let mut vocab = FeatureVocabulary {
            intervals,
            keys,
            quintiles,
            lookup: HashMap::new(),
            cut_lookup: HashMap::new(),
        };
        vocab.rebuild_index();
        vocab
    }

    fn rebuild_index(&mut self) {
        self.lookup = self.keys.iter().enumerate().map(|(i, k)| (*k, i as u32)).collect();
        self.cut_lookup = self.quintiles.iter().map(|q| ((q.interval, q.concept), q.cuts)).collect();
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn index_of(&self, key: &FeatureKey) -> Option<u32> {
        self.lookup.get(key).copied()
    }

    pub fn cuts(&self, interval: usize, concept: u64) -> Option<[f64; 4]> {
        self.cut_lookup.get(&(interval, concept)).copied()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vocab: FeatureVocabulary = serde_json::from_str(&text)?;
        vocab.rebuild_index();
        if vocab.lookup.len() != vocab.keys.len() {
            return Err(Error::Schema("vocabulary contains duplicate keys".into()));
        }
        Ok(vocab)
    }
}

/// Quantile with linear interpolation between order statistics:
/// position `(n - 1) p` in the sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Cut points at the 20th, 40th, 60th and 80th percentiles.
pub fn quintile_cuts(values: &[f64]) -> [f64; 4] {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    [0.2, 0.4, 0.6, 0.8].map(|p| quantile(&sorted, p))
}

/// Bin index in `0..5`; a value equal to a cut falls in the higher bin.
pub fn quintile_bin(cuts: &[f64; 4], value: f64) -> u8 {
    cuts.iter().filter(|&&c| value >= c).count() as u8
}

/// Builds the vocabulary from training timelines only.
pub fn build_vocabulary(timelines: &[Timeline], intervals: &IntervalSpec) -> Result<FeatureVocabulary> {
    intervals.validate()?;
    if timelines.is_empty() {
        return Err(Error::InsufficientData("vocabulary needs at least one training timeline".into()));
    }
    let mut demographics = BTreeSet::new();
    let mut keys = BTreeSet::new();
    let mut numeric: BTreeMap<(usize, u64), Vec<f64>> = BTreeMap::new();
    for timeline in timelines {
        demographics.extend(timeline.demographics.iter().copied());
        for event in &timeline.events {
            for (i, iv) in intervals.intervals.iter().enumerate() {
                if !iv.contains(event.timestamp) {
                    continue;
                }
                let key = |kind| FeatureKey::Interval {
                    interval: i,
                    concept: event.concept_id,
                    kind,
                };
                keys.insert(key(FeatureKind::Occurrence));
                if let Some(v) = event.numeric_value {
                    numeric.entry((i, event.concept_id)).or_default().push(v);
                    if event.reference_high.is_some() {
                        keys.insert(key(FeatureKind::AboveRange));
                    }
                    if event.reference_low.is_some() {
                        keys.insert(key(FeatureKind::BelowRange));
                    }
                }
            }
        }
    }
    let mut quintiles = Vec::new();
    for ((interval, concept), values) in &numeric {
        if values.len() < MIN_QUINTILE_OBSERVATIONS {
            continue;
        }
        quintiles.push(QuintileCuts {
            interval: *interval,
            concept: *concept,
            cuts: quintile_cuts(values),
        });
        for bin in 0..5 {
            keys.insert(FeatureKey::Interval {
                interval: *interval,
                concept: *concept,
                kind: FeatureKind::Quintile(bin),
            });
        }
    }
    let all_keys: Vec<FeatureKey> = demographics
        .into_iter()
        .map(FeatureKey::Demographic)
        .chain(keys)
        .collect();
    Ok(FeatureVocabulary::from_parts(intervals.clone(), all_keys, quintiles))
}

/// Sorted feature indices set for `timeline`. Keys absent from the
/// vocabulary are skipped.
pub fn extract(timeline: &Timeline, vocab: &FeatureVocabulary) -> Vec<u32> {
    let mut out = BTreeSet::new();
    let mut set = |key: FeatureKey| {
        if let Some(i) = vocab.index_of(&key) {
            out.insert(i);
        }
    };
    for &concept in &timeline.demographics {
        set(FeatureKey::Demographic(concept));
    }
    for event in &timeline.events {
        for (i, iv) in vocab.intervals.intervals.iter().enumerate() {
            if !iv.contains(event.timestamp) {
                continue;
            }
            let key = |kind| FeatureKey::Interval {
                interval: i,
                concept: event.concept_id,
                kind,
            };
            set(key(FeatureKind::Occurrence));
            let Some(v) = event.numeric_value else { continue };
            if event.reference_high.is_some_and(|hi| v > hi) {
                set(key(FeatureKind::AboveRange));
            }
            if event.reference_low.is_some_and(|lo| v < lo) {
                set(key(FeatureKind::BelowRange));
            }
            if let Some(cuts) = vocab.cuts(i, event.concept_id) {
                set(key(FeatureKind::Quintile(quintile_bin(&cuts, v))));
            }
        }
    }
    out.into_iter().collect()
}

/// A timeline with its outcome and group label.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub timeline: Timeline,
    pub group: String,
    pub outcome: u8,
}

/// Reads a timeline file; returns the attribute name and subjects in file order.
pub fn read_timelines<R: BufRead>(reader: R) -> Result<(String, Vec<Subject>)> {
    let mut lines = reader.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse { line, message };
    let header = match lines.next() {
        Some((_, l)) => l.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "empty timeline file".into())),
    };
    let attribute = header
        .trim_end()
        .strip_prefix("#fairrisk-timelines v1\tattribute=")
        .ok_or_else(|| parse_err(1, "expected '#fairrisk-timelines v1<TAB>attribute=<name>'".into()))?
        .to_string();

    let mut subjects: Vec<Subject> = Vec::new();
    let mut events: Vec<Vec<Event>> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let opt = |s: &str, line: usize| -> Result<Option<f64>> {
        if s == "-" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| parse_err(line, format!("{s:?}: {e}")))
        }
    };
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| parse_err(line_no, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        match f[0] {
            "S" if f.len() == 5 => {
                let outcome = match f[3] {
                    "0" => 0,
                    "1" => 1,
                    o => return Err(parse_err(line_no, format!("record '{}': outcome {o:?} is not 0 or 1", f[1]))),
                };
                let demographics = f[4]
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<u64>().map_err(|e| parse_err(line_no, format!("demographic {s:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                if index.insert(f[1].to_string(), subjects.len()).is_some() {
                    return Err(parse_err(line_no, format!("duplicate subject '{}'", f[1])));
                }
                subjects.push(Subject {
                    timeline: Timeline {
                        record_id: f[1].to_string(),
                        events: Vec::new(),
                        demographics,
                    },
                    group: f[2].to_string(),
                    outcome,
                });
                events.push(Vec::new());
            }
            "E" if f.len() == 7 => {
                let &pos = index
                    .get(f[1])
                    .ok_or_else(|| parse_err(line_no, format!("event for unknown subject '{}'", f[1])))?;
                let concept_id = f[2].parse().map_err(|e| parse_err(line_no, format!("concept id: {e}")))?;
                let timestamp: f64 = f[3].parse().map_err(|e| parse_err(line_no, format!("timestamp: {e}")))?;
                events[pos].push(Event {
                    concept_id,
                    timestamp,
                    numeric_value: opt(f[4], line_no)?,
                    reference_low: opt(f[5], line_no)?,
                    reference_high: opt(f[6], line_no)?,
                });
            }
            _ => return Err(parse_err(line_no, format!("unrecognized line with {} fields", f.len()))),
        }
    }
    for (subject, evs) in subjects.iter_mut().zip(events) {
        let t = &subject.timeline;
        subject.timeline = Timeline::new(t.record_id.clone(), evs, t.demographics.clone())?;
    }
    Ok((attribute, subjects))
}

pub fn load_timelines(path: impl AsRef<Path>) -> Result<(String, Vec<Subject>)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_timelines(BufReader::new(file))
}

/// Output of [`extract_cohort`].
#[derive(Debug, Clone)]
pub struct Extraction {
    pub cohort: Cohort,
    pub vocabulary: FeatureVocabulary,
    pub split: SplitPlan,
}

/// Splits subjects, builds the vocabulary from the non-test subjects, and
/// extracts every subject into a cohort. Group labels are sorted unless
/// `group_order` is given.
pub fn extract_cohort(
    attribute_name: &str,
    subjects: &[Subject],
    intervals: &IntervalSpec,
    group_order: Option<Vec<String>>,
    test_fraction: f64,
    folds: usize,
    seed: u64,
) -> Result<Extraction> {
    let ids: Vec<String> = subjects.iter().map(|s| s.timeline.record_id.clone()).collect();
    let split = cohort::split_ids(&ids, test_fraction, folds, seed)?;
    let test: BTreeSet<&str> = split.test_ids.iter().map(String::as_str).collect();
    let training: Vec<Timeline> = subjects
        .iter()
        .filter(|s| !test.contains(s.timeline.record_id.as_str()))
        .map(|s| s.timeline.clone())
        .collect();
    let vocabulary = build_vocabulary(&training, intervals)?;

    let labels = group_order.unwrap_or_else(|| {
        subjects
            .iter()
            .map(|s| s.group.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    });
    let attribute = GroupAttribute::new(attribute_name, labels)?;
    let records = subjects
        .iter()
        .map(|s| {
            let group = attribute.index_of(&s.group).ok_or_else(|| {
                Error::Schema(format!("subject '{}': unknown group '{}'", s.timeline.record_id, s.group))
            })?;
            Ok(CohortRecord {
                record_id: s.timeline.record_id.clone(),
                features: extract(&s.timeline, &vocabulary),
                outcome: s.outcome,
                group,
                true_probability: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cohort = Cohort::new(attribute, vocabulary.len(), records)?;
    Ok(Extraction {
        cohort,
        vocabulary,
        split,
    })
}
