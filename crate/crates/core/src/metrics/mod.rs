//! Evaluation metrics and the per-model [`FairnessReport`].
//!
//! Undefined values (a group missing an outcome class, an empty stratum, a
//! vacuous cross-group comparison) are `None` and serialize as [`UNDEFINED`].

pub mod calibration;
pub mod distance;
pub mod parity;
pub mod ranking;

use serde::{Deserialize, Serialize};

pub use calibration::{ace, fit_calibrator, rce, Calibrator};
pub use distance::emd_1d;
pub use parity::{parity_decomposition, ParityDecomposition, ParityForm};
pub use ranking::{auroc, average_precision, rank_probability, xauc, Direction};

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::penalty::{PenaltyConfig, Stratum};

/// Token written in place of an undefined metric.
pub const UNDEFINED: &str = "NA";

/// Serde adapter writing `None` as [`UNDEFINED`].
pub mod undefined {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::UNDEFINED;

    pub fn serialize<S: Serializer>(value: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(v) => s.serialize_f64(*v),
            None => s.serialize_str(UNDEFINED),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Token(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(Some(v)),
            Repr::Token(t) if t == UNDEFINED => Ok(None),
            Repr::Token(t) => Err(serde::de::Error::custom(format!("expected a number or {UNDEFINED}, got {t:?}"))),
        }
    }
}

/// Mean binary cross-entropy of probabilities clamped to `[1e-15, 1 - 1e-15]`.
pub fn cross_entropy(predictions: &[f64], outcomes: &[u8]) -> Option<f64> {
    if predictions.is_empty() {
        return None;
    }
    let total: f64 = predictions
        .iter()
        .zip(outcomes)
        .map(|(&f, &y)| {
            let f = calibration::clamp_probability(f);
            if y == 1 {
                -f.ln()
            } else {
                -(1.0 - f).ln()
            }
        })
        .sum();
    Some(total / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub lambda: f64,
    pub penalty: Option<PenaltyConfig>,
    pub fold: Option<usize>,
    pub seed: Option<u64>,
}

impl ReportMeta {
    pub fn unlabeled() -> Self {
        ReportMeta {
            lambda: 0.0,
            penalty: None,
            fold: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub count: usize,
    pub positives: usize,
    #[serde(with = "undefined")]
    pub auroc: Option<f64>,
    #[serde(with = "undefined")]
    pub average_precision: Option<f64>,
    #[serde(with = "undefined")]
    pub ce_loss: Option<f64>,
    #[serde(with = "undefined")]
    pub ace: Option<f64>,
    #[serde(with = "undefined")]
    pub ace_signed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub count: usize,
    pub positives: usize,
    #[serde(with = "undefined")]
    pub auroc: Option<f64>,
    #[serde(with = "undefined")]
    pub average_precision: Option<f64>,
    #[serde(with = "undefined")]
    pub ce_loss: Option<f64>,
    #[serde(with = "undefined")]
    pub ace: Option<f64>,
    #[serde(with = "undefined")]
    pub ace_signed: Option<f64>,
    #[serde(with = "undefined")]
    pub rce: Option<f64>,
    #[serde(with = "undefined")]
    pub rce_signed: Option<f64>,
    #[serde(with = "undefined")]
    pub xauc_positive: Option<f64>,
    #[serde(with = "undefined")]
    pub xauc_negative: Option<f64>,
    /// EMD to the marginal over all records.
    #[serde(with = "undefined")]
    pub emd_all: Option<f64>,
    /// EMD to the marginal within `y = 1`.
    #[serde(with = "undefined")]
    pub emd_positive: Option<f64>,
    /// EMD to the marginal within `y = 0`.
    #[serde(with = "undefined")]
    pub emd_negative: Option<f64>,
    /// Signed difference in mean prediction from the marginal, all records.
    #[serde(with = "undefined")]
    pub mean_all: Option<f64>,
    #[serde(with = "undefined")]
    pub mean_positive: Option<f64>,
    #[serde(with = "undefined")]
    pub mean_negative: Option<f64>,
}

/// Aggregate parity violations `M_DP`, `M_EqOpp`, `M_EqOdds` in one form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityAggregates {
    #[serde(with = "undefined")]
    pub demographic_parity: Option<f64>,
    #[serde(with = "undefined")]
    pub equal_opportunity: Option<f64>,
    #[serde(with = "undefined")]
    pub equalized_odds: Option<f64>,
    /// Sum of the `y = 0` stratum components; `equalized_odds` adds it to `equal_opportunity`.
    #[serde(with = "undefined")]
    pub negative_stratum: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub meta: ReportMeta,
    pub overall: OverallMetrics,
    pub groups: Vec<GroupMetrics>,
    pub emd: ParityAggregates,
    pub mean: ParityAggregates,
    /// Calibrators that did not converge: `"overall"` or a group label.
    pub unconverged_calibrators: Vec<String>,
}

fn sum_defined(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (None, None) => None,
        _ => Some(a.unwrap_or(0.0) + b.unwrap_or(0.0)),
    }
}

fn aggregates(all: &ParityDecomposition, pos: &ParityDecomposition, neg: &ParityDecomposition) -> ParityAggregates {
    ParityAggregates {
        demographic_parity: all.aggregate,
        equal_opportunity: pos.aggregate,
        equalized_odds: sum_defined(pos.aggregate, neg.aggregate),
        negative_stratum: neg.aggregate,
    }
}

fn fit_if_possible(f: &[f64], y: &[u8]) -> Result<Option<Calibrator>> {
    match fit_calibrator(f, y) {
        Ok(c) => Ok(Some(c)),
        Err(Error::Calibration(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Computes every metric for aligned predictions, outcomes and group indices.
pub fn evaluate_arrays(
    predictions: &[f64],
    outcomes: &[u8],
    groups: &[usize],
    group_names: &[String],
    meta: ReportMeta,
) -> Result<FairnessReport> {
    let n = predictions.len();
    if outcomes.len() != n || groups.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: if outcomes.len() != n { outcomes.len() } else { groups.len() },
        });
    }
    if let Some(bad) = predictions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Parameter(format!("prediction {bad} outside [0, 1]")));
    }
    let k = group_names.len();
    if let Some(&g) = groups.iter().find(|&&g| g >= k) {
        return Err(Error::Parameter(format!("group index {g} out of range for {k} groups")));
    }

    let mut unconverged = Vec::new();
    let overall_cal = fit_if_possible(predictions, outcomes)?;
    if overall_cal.is_some_and(|c| !c.converged) {
        unconverged.push("overall".to_string());
    }
    let overall = OverallMetrics {
        count: n,
        positives: outcomes.iter().filter(|&&y| y == 1).count(),
        auroc: auroc(predictions, outcomes),
        average_precision: average_precision(predictions, outcomes),
        ce_loss: cross_entropy(predictions, outcomes),
        ace: overall_cal.map(|c| calibration::ace_with(&c, predictions, false)),
        ace_signed: overall_cal.map(|c| calibration::ace_with(&c, predictions, true)),
    };

    let decompose = |stratum, form| parity_decomposition(predictions, outcomes, groups, k, stratum, form);
    let emd = [
        decompose(Stratum::All, ParityForm::Emd)?,
        decompose(Stratum::Positive, ParityForm::Emd)?,
        decompose(Stratum::Negative, ParityForm::Emd)?,
    ];
    let mean = [
        decompose(Stratum::All, ParityForm::Mean)?,
        decompose(Stratum::Positive, ParityForm::Mean)?,
        decompose(Stratum::Negative, ParityForm::Mean)?,
    ];

    let mut group_metrics = Vec::with_capacity(k);
    for (g, name) in group_names.iter().enumerate() {
        let (fk, yk): (Vec<f64>, Vec<u8>) = predictions
            .iter()
            .zip(outcomes)
            .zip(groups)
            .filter(|(_, &a)| a == g)
            .map(|((&f, &y), _)| (f, y))
            .unzip();
        let group_cal = fit_if_possible(&fk, &yk)?;
        if group_cal.is_some_and(|c| !c.converged) {
            unconverged.push(name.clone());
        }
        let rce_pair = match (group_cal, overall_cal) {
            (Some(gc), Some(oc)) => (
                Some(calibration::rce_with(&gc, &oc, &fk, false)),
                Some(calibration::rce_with(&gc, &oc, &fk, true)),
            ),
            _ => (None, None),
        };
        group_metrics.push(GroupMetrics {
            group: name.clone(),
            count: fk.len(),
            positives: yk.iter().filter(|&&y| y == 1).count(),
            auroc: auroc(&fk, &yk),
            average_precision: average_precision(&fk, &yk),
            ce_loss: cross_entropy(&fk, &yk),
            ace: group_cal.map(|c| calibration::ace_with(&c, &fk, false)),
            ace_signed: group_cal.map(|c| calibration::ace_with(&c, &fk, true)),
            rce: rce_pair.0,
            rce_signed: rce_pair.1,
            xauc_positive: xauc(predictions, outcomes, groups, g, Direction::Positive),
            xauc_negative: xauc(predictions, outcomes, groups, g, Direction::Negative),
            emd_all: emd[0].per_group[g],
            emd_positive: emd[1].per_group[g],
            emd_negative: emd[2].per_group[g],
            mean_all: mean[0].per_group[g],
            mean_positive: mean[1].per_group[g],
            mean_negative: mean[2].per_group[g],
        });
    }

    Ok(FairnessReport {
        meta,
        overall,
        groups: group_metrics,
        emd: aggregates(&emd[0], &emd[1], &emd[2]),
        mean: aggregates(&mean[0], &mean[1], &mean[2]),
        unconverged_calibrators: unconverged,
    })
}

/// Evaluates predictions for the records of `cohort` at positions `rows`.
pub fn evaluate(cohort: &Cohort, rows: &[usize], predictions: &[f64], meta: ReportMeta) -> Result<FairnessReport> {
    if rows.len() != predictions.len() {
        return Err(Error::Shape {
            expected: rows.len(),
            got: predictions.len(),
        });
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= cohort.len()) {
        return Err(Error::Parameter(format!("row {bad} out of range for cohort of {}", cohort.len())));
    }
    let outcomes: Vec<u8> = rows.iter().map(|&r| cohort.records[r].outcome).collect();
    let groups: Vec<usize> = rows.iter().map(|&r| cohort.records[r].group).collect();
    evaluate_arrays(predictions, &outcomes, &groups, &cohort.attribute.group_names, meta)
}
