//! Fairness regularizers.
//!
//! Each regularizer compares, inside one or more outcome strata, the
//! distribution of a per-record score for every group against the pooled
//! distribution of the stratum (one-vs-marginal). The stratum set is fixed by
//! the [`Criterion`]; the comparison is either a Gaussian-kernel MMD (biased
//! V-statistic) or the squared difference in means.
//!
//! During training the score is the model's positive-class log-probability.
//! [`regularizer`] returns the value together with its exact gradient with
//! respect to every input score; the bandwidth is treated as a constant.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Lower bound applied to median-heuristic bandwidths.
pub const MIN_BANDWIDTH: f64 = 1e-3;

/// Records a group needs inside a stratum before it contributes a term.
pub const MIN_CELL_SIZE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Unconditional: all records form a single stratum.
    DemographicParity,
    /// Conditional: strata `y = 1` and `y = 0`.
    EqualizedOdds,
    /// Positive-conditional: stratum `y = 1` only.
    EqualOpportunity,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [
        Criterion::DemographicParity,
        Criterion::EqualizedOdds,
        Criterion::EqualOpportunity,
    ];

    pub fn strata(self) -> &'static [Stratum] {
        match self {
            Criterion::DemographicParity => &[Stratum::All],
            Criterion::EqualOpportunity => &[Stratum::Positive],
            Criterion::EqualizedOdds => &[Stratum::Positive, Stratum::Negative],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::DemographicParity => "demographic_parity",
            Criterion::EqualizedOdds => "equalized_odds",
            Criterion::EqualOpportunity => "equal_opportunity",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown criterion '{s}'")))
    }
}

/// Outcome stratum over which group distributions are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    All,
    Positive,
    Negative,
}

impl Stratum {
    pub fn contains(self, y: u8) -> bool {
        match self {
            Stratum::All => true,
            Stratum::Positive => y == 1,
            Stratum::Negative => y == 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    Mmd,
    Mean,
}

impl Distance {
    pub fn as_str(self) -> &'static str {
        match self {
            Distance::Mmd => "mmd",
            Distance::Mean => "mean",
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmd" => Ok(Distance::Mmd),
            "mean" => Ok(Distance::Mean),
            other => Err(Error::Config(format!("unknown distance '{other}'"))),
        }
    }
}

/// Kernel bandwidth for the MMD penalty. Serialized as a number or `"median"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise absolute difference of the pooled scores, floored at [`MIN_BANDWIDTH`].
    Median,
}

impl Bandwidth {
    pub fn resolve(self, values: &[f64]) -> f64 {
        match self {
            Bandwidth::Fixed(sigma) => sigma,
            Bandwidth::Median => median_bandwidth(values),
        }
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bandwidth::Fixed(sigma) => write!(f, "{sigma}"),
            Bandwidth::Median => f.write_str("median"),
        }
    }
}

impl std::str::FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "median" {
            return Ok(Bandwidth::Median);
        }
        s.parse::<f64>()
            .map(Bandwidth::Fixed)
            .map_err(|_| Error::Config(format!("bandwidth must be a number or \"median\", got '{s}'")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BandwidthRepr {
    Fixed(f64),
    Named(String),
}

impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Bandwidth::Fixed(sigma) => BandwidthRepr::Fixed(sigma),
            Bandwidth::Median => BandwidthRepr::Named("median".into()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match BandwidthRepr::deserialize(deserializer)? {
            BandwidthRepr::Fixed(sigma) => Ok(Bandwidth::Fixed(sigma)),
            BandwidthRepr::Named(name) => name.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Which log-softmax components feed the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyInput {
    /// `log f` of the positive class only.
    #[default]
    PositiveLogProb,
    /// Sum of the penalty applied separately to both log-probabilities.
    BothLogProbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub criterion: Criterion,
    pub distance: Distance,
    pub lambda: f64,
    pub bandwidth: Bandwidth,
    #[serde(default)]
    pub input: PenaltyInput,
}

impl PenaltyConfig {
    pub fn new(criterion: Criterion, distance: Distance, lambda: f64) -> Self {
        PenaltyConfig {
            criterion,
            distance,
            lambda,
            bandwidth: Bandwidth::Median,
            input: PenaltyInput::PositiveLogProb,
        }
    }

    /// The unpenalized objective.
    pub fn none() -> Self {
        Self::new(Criterion::DemographicParity, Distance::Mmd, 0.0)
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        PenaltyConfig { lambda, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Parameter(format!(
                "lambda must be a finite nonnegative number, got {}",
                self.lambda
            )));
        }
        if let Bandwidth::Fixed(sigma) = self.bandwidth {
            if !(sigma > 0.0) || !sigma.is_finite() {
                return Err(Error::Parameter(format!("bandwidth must be positive, got {sigma}")));
            }
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.lambda > 0.0
    }
}

fn check_bandwidth(bandwidth: f64) -> Result<()> {
    if bandwidth > 0.0 && bandwidth.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("bandwidth must be positive, got {bandwidth}")))
    }
}

#[inline]
fn gaussian(u: f64, v: f64, inv_two_var: f64) -> f64 {
    let d = u - v;
    (-d * d * inv_two_var).exp()
}

/// Biased squared MMD between two samples under `k(u, v) = exp(-(u - v)^2 / (2 sigma^2))`.
pub fn mmd_sq(sample_a: &[f64], sample_b: &[f64], bandwidth: f64) -> Result<f64> {
    mmd_sq_with_grad(sample_a, sample_b, bandwidth).map(|(value, _, _)| value)
}

/// [`mmd_sq`] plus its gradient with respect to every element of both samples.
pub fn mmd_sq_with_grad(
    sample_a: &[f64],
    sample_b: &[f64],
    bandwidth: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_bandwidth(bandwidth)?;
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::InsufficientData("MMD needs two nonempty samples".into()));
    }
    let inv_two_var = 1.0 / (2.0 * bandwidth * bandwidth);
    let inv_var = 1.0 / (bandwidth * bandwidth);
    let (n, m) = (sample_a.len() as f64, sample_b.len() as f64);

    // Each self-kernel sum returns the value and per-element derivative sums.
    let self_term = |s: &[f64]| {
        let mut total = 0.0;
        let mut grad = vec![0.0; s.len()];
        for (i, &u) in s.iter().enumerate() {
            for (j, &v) in s.iter().enumerate() {
                let k = gaussian(u, v, inv_two_var);
                total += k;
                if i != j {
                    grad[i] -= k * (u - v) * inv_var;
                }
            }
        }
        (total, grad)
    };
    let (kaa, daa) = self_term(sample_a);
    let (kbb, dbb) = self_term(sample_b);
    let mut kab = 0.0;
    let mut dab_a = vec![0.0; sample_a.len()];
    let mut dab_b = vec![0.0; sample_b.len()];
    for (i, &u) in sample_a.iter().enumerate() {
        for (j, &v) in sample_b.iter().enumerate() {
            let k = gaussian(u, v, inv_two_var);
            kab += k;
            let dk = k * (u - v) * inv_var;
            dab_a[i] -= dk;
            dab_b[j] += dk;
        }
    }
    let value = (kaa / (n * n) + kbb / (m * m) - 2.0 * kab / (n * m)).max(0.0);
    let grad_a = daa
        .iter()
        .zip(&dab_a)
        .map(|(d, c)| 2.0 * d / (n * n) - 2.0 * c / (n * m))
        .collect();
    let grad_b = dbb
        .iter()
        .zip(&dab_b)
        .map(|(d, c)| 2.0 * d / (m * m) - 2.0 * c / (n * m))
        .collect();
    Ok((value, grad_a, grad_b))
}

/// `sum_k (mean_k - mean_marginal)^2`, skipping empty groups.
pub fn mean_diff_penalty(groups: &[Vec<f64>], marginal: &[f64]) -> Result<f64> {
    if marginal.is_empty() {
        return Err(Error::InsufficientData("mean difference needs a nonempty marginal".into()));
    }
    let m = crate::util::mean(marginal);
    Ok(groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let d = crate::util::mean(g) - m;
            d * d
        })
        .sum())
}

/// Median of `|v_i - v_j|` over all pairs `i < j`, floored at [`MIN_BANDWIDTH`].
pub fn median_bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return MIN_BANDWIDTH;
    }
    let mut diffs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            diffs.push((values[i] - values[j]).abs());
        }
    }
    let mid = diffs.len() / 2;
    let (_, &mut upper, _) = diffs.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if diffs.len() % 2 == 1 {
        upper
    } else {
        let lower = diffs[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    median.max(MIN_BANDWIDTH)
}

/// Value and gradient of a regularizer over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularizer {
    pub value: f64,
    /// Derivative of `value` with respect to each input score.
    pub grad: Vec<f64>,
    /// Bandwidth used for MMD terms; `None` for the mean distance.
    pub bandwidth: Option<f64>,
    /// Number of (stratum, group) cells skipped for having fewer than [`MIN_CELL_SIZE`] records.
    pub dropped_cells: usize,
}

/// Computes the regularizer `R` for `config` over per-record `scores`.
///
/// `bandwidth` overrides `config.bandwidth` when given; otherwise the
/// configured policy is resolved on the pooled batch scores.
pub fn regularizer(
    scores: &[f64],
    outcomes: &[u8],
    groups: &[usize],
    num_groups: usize,
    config: &PenaltyConfig,
    bandwidth: Option<f64>,
) -> Result<Regularizer> {
    if scores.len() != outcomes.len() || scores.len() != groups.len() {
        return Err(Error::Shape {
            expected: scores.len(),
            got: if outcomes.len() != scores.len() { outcomes.len() } else { groups.len() },
        });
    }
    if let Some(&g) = groups.iter().find(|&&g| g >= num_groups) {
        return Err(Error::Parameter(format!("group index {g} out of range for {num_groups} groups")));
    }
    let sigma = match config.distance {
        Distance::Mmd => {
            let sigma = bandwidth.unwrap_or_else(|| config.bandwidth.resolve(scores));
            check_bandwidth(sigma)?;
            Some(sigma)
        }
        Distance::Mean => None,
    };

    let mut value = 0.0;
    let mut grad = vec![0.0; scores.len()];
    let mut dropped = 0;
    for &stratum in config.criterion.strata() {
        let members: Vec<usize> = (0..scores.len())
            .filter(|&i| stratum.contains(outcomes[i]))
            .collect();
        let mut cells: Vec<Vec<usize>> = vec![Vec::new(); num_groups];
        for (pos, &i) in members.iter().enumerate() {
            cells[groups[i]].push(pos);
        }
        let active: Vec<bool> = cells.iter().map(|c| c.len() >= MIN_CELL_SIZE).collect();
        let skipped = active.iter().filter(|a| !**a).count();
        if skipped > 0 {
            log::debug!("{stratum:?} stratum: {skipped} group cell(s) below size {MIN_CELL_SIZE}");
        }
        dropped += skipped;
        if !active.iter().any(|&a| a) {
            continue;
        }
        let values: Vec<f64> = members.iter().map(|&i| scores[i]).collect();
        let member_groups: Vec<usize> = members.iter().map(|&i| groups[i]).collect();
        let (v, g) = match sigma {
            Some(sigma) => stratum_mmd(&values, &member_groups, &cells, &active, sigma),
            None => stratum_mean(&values, &member_groups, &cells, &active),
        };
        value += v;
        for (pos, &i) in members.iter().enumerate() {
            grad[i] += g[pos];
        }
    }
    Ok(Regularizer {
        value,
        grad,
        bandwidth: sigma,
        dropped_cells: dropped,
    })
}

/// Sum over active groups of MMD^2(group, stratum) and its gradient.
fn stratum_mmd(
    values: &[f64],
    member_groups: &[usize],
    cells: &[Vec<usize>],
    active: &[bool],
    sigma: f64,
) -> (f64, Vec<f64>) {
    let n = values.len();
    let k = cells.len();
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let inv_var = 1.0 / (sigma * sigma);

    // kernel sums over all pairs, split by the group of the column record
    let mut total = 0.0;
    let mut group_block = vec![0.0; k];
    let mut group_rows = vec![0.0; k];
    // derivative sums: row_all[l] = sum_j dk(x_l, x_j)/dx_l, row_group[l][g] restricted to j in g
    let mut row_all = vec![0.0; n];
    let mut row_group = vec![0.0; n * k];
    for l in 0..n {
        let u = values[l];
        let gl = member_groups[l];
        for j in 0..n {
            let kv = gaussian(u, values[j], inv_two_var);
            let gj = member_groups[j];
            total += kv;
            group_rows[gl] += kv;
            if gl == gj {
                group_block[gl] += kv;
            }
            if l != j {
                let d = -kv * (u - values[j]) * inv_var;
                row_all[l] += d;
                row_group[l * k + gj] += d;
            }
        }
    }

    let nf = n as f64;
    let kbb = total / (nf * nf);
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for g in 0..k {
        if !active[g] {
            continue;
        }
        let ng = cells[g].len() as f64;
        let term = group_block[g] / (ng * ng) + kbb - 2.0 * group_rows[g] / (ng * nf);
        value += term.max(0.0);
        for l in 0..n {
            let in_group = member_groups[l] == g;
            let rg = row_group[l * k + g];
            let mut d = 2.0 * row_all[l] / (nf * nf) - 2.0 * rg / (ng * nf);
            if in_group {
                d += 2.0 * rg / (ng * ng) - 2.0 * row_all[l] / (ng * nf);
            }
            grad[l] += d;
        }
    }
    (value, grad)
}

/// Sum over active groups of (mean_g - mean)^2 and its gradient.
fn stratum_mean(
    values: &[f64],
    member_groups: &[usize],
    cells: &[Vec<usize>],
    active: &[bool],
) -> (f64, Vec<f64>) {
    let n = values.len() as f64;
    let marginal = values.iter().sum::<f64>() / n;
    let mut diffs = vec![0.0; cells.len()];
    let mut value = 0.0;
    for (g, cell) in cells.iter().enumerate() {
        if active[g] {
            let mean_g = cell.iter().map(|&p| values[p]).sum::<f64>() / cell.len() as f64;
            diffs[g] = mean_g - marginal;
            value += diffs[g] * diffs[g];
        }
    }
    let shared = -2.0 * diffs.iter().sum::<f64>() / n;
    let grad = member_groups
        .iter()
        .map(|&g| {
            let own = if active[g] { 2.0 * diffs[g] / cells[g].len() as f64 } else { 0.0 };
            own + shared
        })
        .collect();
    (value, grad)
}
