//! Feedforward binary classifier trained on a fairness-penalized objective.
//!
//! The network maps sparse inputs through `num_hidden_layers` ReLU layers of
//! width `hidden_dim` to two logits, followed by a log-softmax. Dropout is
//! inverted and applied to hidden activations only, at training time.
//! Gradients are computed by hand for this architecture; everything is `f64`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, SplitPlan};
use crate::error::{Error, Result};
use crate::penalty::{self, PenaltyConfig, PenaltyInput};
use crate::util::{self, Rng};

pub const BATCH_SIZE_GRID: [usize; 3] = [128, 256, 512];
pub const DROPOUT_GRID: [f64; 4] = [0.0, 0.25, 0.5, 0.75];
pub const HIDDEN_DIM_GRID: [usize; 2] = [128, 256];
pub const LEARNING_RATE_GRID: [f64; 3] = [1e-3, 1e-4, 1e-5];
pub const HIDDEN_LAYERS_GRID: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub batch_size: usize,
    pub dropout_prob: f64,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub num_hidden_layers: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_batches_per_iteration")]
    pub batches_per_iteration: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_max_iterations() -> usize {
    150
}

fn default_batches_per_iteration() -> usize {
    100
}

fn default_patience() -> usize {
    10
}

/// Named hyperparameter presets: the selected configurations for each
/// clinical task, plus a small off-grid configuration for desk-scale runs.
pub const PRESETS: &[(&str, Hyperparameters)] = &[
    ("starr_hospital_mortality", Hyperparameters::grid(512, 0.75, 256, 1e-4, 3)),
    ("starr_prolonged_los", Hyperparameters::grid(256, 0.75, 128, 1e-4, 1)),
    ("starr_readmission_30", Hyperparameters::grid(512, 0.75, 128, 1e-5, 3)),
    ("optum_readmission_30", Hyperparameters::grid(512, 0.25, 128, 1e-5, 3)),
    ("optum_prolonged_los", Hyperparameters::grid(512, 0.25, 128, 1e-5, 3)),
    ("mimic_icu_los_3", Hyperparameters::grid(128, 0.75, 256, 1e-5, 1)),
    ("mimic_icu_los_7", Hyperparameters::grid(512, 0.75, 128, 1e-5, 3)),
    ("mimic_hospital_mortality", Hyperparameters::grid(128, 0.75, 256, 1e-5, 1)),
    ("mimic_icu_mortality", Hyperparameters::grid(128, 0.75, 256, 1e-5, 1)),
    (
        "synthetic_small",
        Hyperparameters {
            batch_size: 256,
            dropout_prob: 0.0,
            hidden_dim: 32,
            learning_rate: 1e-3,
            num_hidden_layers: 1,
            max_iterations: 40,
            batches_per_iteration: 20,
            patience: 5,
        },
    ),
];

impl Hyperparameters {
    /// A configuration with the default iteration budget and patience.
    pub const fn grid(
        batch_size: usize,
        dropout_prob: f64,
        hidden_dim: usize,
        learning_rate: f64,
        num_hidden_layers: usize,
    ) -> Self {
        Hyperparameters {
            batch_size,
            dropout_prob,
            hidden_dim,
            learning_rate,
            num_hidden_layers,
            max_iterations: 150,
            batches_per_iteration: 100,
            patience: 10,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        PRESETS.iter().find(|(n, _)| *n == name).map(|(_, hp)| *hp)
    }

    /// True when every tunable value lies on the search grid.
    pub fn is_on_grid(&self) -> bool {
        BATCH_SIZE_GRID.contains(&self.batch_size)
            && DROPOUT_GRID.contains(&self.dropout_prob)
            && HIDDEN_DIM_GRID.contains(&self.hidden_dim)
            && LEARNING_RATE_GRID.contains(&self.learning_rate)
            && HIDDEN_LAYERS_GRID.contains(&self.num_hidden_layers)
    }

    /// Every element of the Cartesian product of the search grids.
    pub fn full_grid() -> Vec<Self> {
        let mut out = Vec::new();
        for &b in &BATCH_SIZE_GRID {
            for &d in &DROPOUT_GRID {
                for &h in &HIDDEN_DIM_GRID {
                    for &lr in &LEARNING_RATE_GRID {
                        for &l in &HIDDEN_LAYERS_GRID {
                            out.push(Hyperparameters::grid(b, d, h, lr, l));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Parameter(format!("hyperparameter {what}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return bad("dropout_prob must lie in [0, 1)");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and nonnegative");
        }
        if self.max_iterations == 0 || self.batches_per_iteration == 0 {
            return bad("max_iterations and batches_per_iteration must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        Ok(())
    }
}

/// Compressed sparse rows of real-valued features.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub dim: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_rows(dim: usize, rows: &[Vec<(u32, f64)>]) -> Result<Self> {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            for &(j, v) in row {
                if j as usize >= dim {
                    return Err(Error::Shape {
                        expected: dim,
                        got: j as usize + 1,
                    });
                }
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(SparseMatrix {
            dim,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let sparse: Vec<Vec<(u32, f64)>> = rows
            .iter()
            .map(|r| {
                if r.len() != dim {
                    return Err(Error::Shape {
                        expected: dim,
                        got: r.len(),
                    });
                }
                Ok(r.iter().enumerate().map(|(j, &v)| (j as u32, v)).collect())
            })
            .collect::<Result<_>>()?;
        Self::from_rows(dim, &sparse)
    }

    /// Binary features of every record in `cohort`, in record order.
    pub fn from_cohort(cohort: &Cohort) -> Self {
        let mut indptr = Vec::with_capacity(cohort.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        for record in &cohort.records {
            indices.extend_from_slice(&record.features);
            indptr.push(indices.len());
        }
        let values = vec![1.0; indices.len()];
        SparseMatrix {
            dim: cohort.vocab_size,
            indptr,
            indices,
            values,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (start, end) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[start..end]
            .iter()
            .zip(&self.values[start..end])
            .map(|(&j, &v)| (j as usize, v))
    }
}

/// Flat parameter vector of the network.
///
/// Layer `l` maps `dims[l]` to `dims[l + 1]` units; its weights are stored
/// row-major as `[input][output]` followed by its bias. The last width is 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl ModelParameters {
    fn layout(dims: &[usize]) -> Vec<(usize, usize)> {
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut pos = 0;
        for w in dims.windows(2) {
            let (w_off, b_off) = (pos, pos + w[0] * w[1]);
            offsets.push((w_off, b_off));
            pos = b_off + w[1];
        }
        offsets
    }

    fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// All-zero parameters for the given architecture.
    pub fn zeros(input_dim: usize, hidden_dim: usize, num_hidden_layers: usize) -> Self {
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat_n(hidden_dim, num_hidden_layers));
        dims.push(2);
        let n = Self::param_count(&dims);
        ModelParameters {
            dims,
            values: vec![0.0; n],
        }
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(input_dim: usize, hidden_dim: usize, num_hidden_layers: usize, rng: &mut Rng) -> Self {
        let mut params = Self::zeros(input_dim, hidden_dim, num_hidden_layers);
        let layout = Self::layout(&params.dims);
        for (l, &(w_off, b_off)) in layout.iter().enumerate() {
            let fan_in = params.dims[l].max(1);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let end = b_off + params.dims[l + 1];
            for v in &mut params.values[w_off..end] {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        params
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || *self.dims.last().unwrap() != 2 {
            return Err(Error::Schema("network must end in a width-2 layer".into()));
        }
        let expected = Self::param_count(&self.dims);
        if self.values.len() != expected {
            return Err(Error::Shape {
                expected,
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Dropout behaviour of a forward pass.
pub enum Mode<'a> {
    Eval,
    Train { dropout_prob: f64, rng: &'a mut Rng },
}

/// Per-record log-probabilities of the positive and negative class.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbs {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

impl LogProbs {
    pub fn probabilities(&self) -> Vec<f64> {
        self.positive.iter().map(|lp| lp.exp()).collect()
    }
}

struct Cache {
    /// Post-activation (post-dropout) output of each hidden layer, `batch x width`.
    hidden: Vec<Vec<f64>>,
    /// Inverted-dropout scale per hidden unit, empty when dropout is off.
    masks: Vec<Vec<f64>>,
    log_probs: LogProbs,
}

fn forward_cached(params: &ModelParameters, x: &SparseMatrix, rows: &[usize], mut mode: Mode<'_>) -> Result<Cache> {
    params.validate()?;
    if x.dim != params.input_dim() {
        return Err(Error::Shape {
            expected: params.input_dim(),
            got: x.dim,
        });
    }
    let layout = ModelParameters::layout(&params.dims);
    let n = rows.len();
    let mut hidden = Vec::with_capacity(params.num_layers() - 1);
    let mut masks = Vec::with_capacity(params.num_layers() - 1);
    let mut current: Vec<f64> = Vec::new();

    for (l, &(w_off, b_off)) in layout.iter().enumerate() {
        let (d_in, d_out) = (params.dims[l], params.dims[l + 1]);
        let w = &params.values[w_off..b_off];
        let b = &params.values[b_off..b_off + d_out];
        let mut out = vec![0.0; n * d_out];
        for r in 0..n {
            let dst = &mut out[r * d_out..(r + 1) * d_out];
            dst.copy_from_slice(b);
            if l == 0 {
                for (j, v) in x.row(rows[r]) {
                    let wr = &w[j * d_out..(j + 1) * d_out];
                    for (o, wv) in dst.iter_mut().zip(wr) {
                        *o += v * wv;
                    }
                }
            } else {
                let src = &current[r * d_in..(r + 1) * d_in];
                for (j, &v) in src.iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    let wr = &w[j * d_out..(j + 1) * d_out];
                    for (o, wv) in dst.iter_mut().zip(wr) {
                        *o += v * wv;
                    }
                }
            }
        }
        if l + 1 < params.num_layers() {
            for v in &mut out {
                *v = v.max(0.0);
            }
            let mask = match &mut mode {
                Mode::Train { dropout_prob, rng } if *dropout_prob > 0.0 => {
                    let keep = 1.0 - *dropout_prob;
                    let mask: Vec<f64> = (0..out.len())
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    for (v, m) in out.iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    mask
                }
                _ => Vec::new(),
            };
            masks.push(mask);
            hidden.push(out.clone());
        }
        current = out;
    }

    let mut positive = Vec::with_capacity(n);
    let mut negative = Vec::with_capacity(n);
    for r in 0..n {
        let (z0, z1) = (current[2 * r], current[2 * r + 1]);
        let m = z0.max(z1);
        let lse = m + ((z0 - m).exp() + (z1 - m).exp()).ln();
        positive.push(z1 - lse);
        negative.push(z0 - lse);
    }
    Ok(Cache {
        hidden,
        masks,
        log_probs: LogProbs { positive, negative },
    })
}

/// Log-probabilities `(log f, log(1 - f))` for the selected rows of `x`.
pub fn forward(params: &ModelParameters, x: &SparseMatrix, rows: &[usize], mode: Mode<'_>) -> Result<LogProbs> {
    forward_cached(params, x, rows, mode).map(|c| c.log_probs)
}

/// Positive-class probabilities in eval mode.
pub fn predict(params: &ModelParameters, x: &SparseMatrix, rows: &[usize]) -> Result<Vec<f64>> {
    forward(params, x, rows, Mode::Eval).map(|lp| lp.probabilities())
}

/// Mean negative log-likelihood of binary outcomes.
pub fn cross_entropy(log_probs: &LogProbs, outcomes: &[u8]) -> f64 {
    let n = outcomes.len() as f64;
    -log_probs
        .positive
        .iter()
        .zip(&log_probs.negative)
        .zip(outcomes)
        .map(|((&lp, &ln), &y)| if y == 1 { lp } else { ln })
        .sum::<f64>()
        / n
}

/// Components of the penalized objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub total: f64,
    pub cross_entropy: f64,
    /// Regularizer value `R`, before scaling by lambda; 0 when lambda is 0.
    pub penalty: f64,
}

/// Batch labels needed by the objective.
#[derive(Debug, Clone, Copy)]
pub struct Labels<'a> {
    pub outcomes: &'a [u8],
    pub groups: &'a [usize],
    pub num_groups: usize,
}

/// Evaluates `R` and its gradient with respect to each log-probability vector.
fn penalty_terms(
    log_probs: &LogProbs,
    labels: Labels<'_>,
    config: &PenaltyConfig,
) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
    let pos = penalty::regularizer(
        &log_probs.positive,
        labels.outcomes,
        labels.groups,
        labels.num_groups,
        config,
        None,
    )?;
    match config.input {
        PenaltyInput::PositiveLogProb => Ok((pos.value, pos.grad, None)),
        PenaltyInput::BothLogProbs => {
            let neg = penalty::regularizer(
                &log_probs.negative,
                labels.outcomes,
                labels.groups,
                labels.num_groups,
                config,
                None,
            )?;
            Ok((pos.value + neg.value, pos.grad, Some(neg.grad)))
        }
    }
}

/// Objective without gradient, e.g. on a validation set.
pub fn objective(log_probs: &LogProbs, labels: Labels<'_>, config: &PenaltyConfig) -> Result<Objective> {
    let ce = cross_entropy(log_probs, labels.outcomes);
    if !config.is_active() {
        return Ok(Objective {
            total: ce,
            cross_entropy: ce,
            penalty: 0.0,
        });
    }
    let (r, _, _) = penalty_terms(log_probs, labels, config)?;
    Ok(Objective {
        total: ce + config.lambda * r,
        cross_entropy: ce,
        penalty: r,
    })
}

/// Mean cross-entropy plus `lambda * R` over the batch, and its exact gradient
/// with respect to every entry of `params.values`.
pub fn penalized_loss_and_grad(
    params: &ModelParameters,
    x: &SparseMatrix,
    rows: &[usize],
    labels: Labels<'_>,
    config: &PenaltyConfig,
    mode: Mode<'_>,
) -> Result<(Objective, Vec<f64>)> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    if labels.outcomes.len() != n || labels.groups.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: labels.outcomes.len().min(labels.groups.len()),
        });
    }
    config.validate()?;
    let cache = forward_cached(params, x, rows, mode)?;
    let lp = &cache.log_probs;
    let ce = cross_entropy(lp, labels.outcomes);

    let nf = n as f64;
    let mut g_pos: Vec<f64> = labels.outcomes.iter().map(|&y| -(y as f64) / nf).collect();
    let mut g_neg: Vec<f64> = labels.outcomes.iter().map(|&y| -(1.0 - y as f64) / nf).collect();
    let mut r = 0.0;
    if config.is_active() {
        let (value, grad_pos, grad_neg) = penalty_terms(lp, labels, config)?;
        r = value;
        for (g, d) in g_pos.iter_mut().zip(&grad_pos) {
            *g += config.lambda * d;
        }
        if let Some(grad_neg) = grad_neg {
            for (g, d) in g_neg.iter_mut().zip(&grad_neg) {
                *g += config.lambda * d;
            }
        }
    }

    // d objective / d logits
    let mut delta = vec![0.0; 2 * n];
    for r_ in 0..n {
        let p1 = lp.positive[r_].exp();
        let p0 = lp.negative[r_].exp();
        let (g1, g0) = (g_pos[r_], g_neg[r_]);
        delta[2 * r_] = -g1 * p0 + g0 * (1.0 - p0);
        delta[2 * r_ + 1] = g1 * (1.0 - p1) - g0 * p1;
    }

    let layout = ModelParameters::layout(&params.dims);
    let mut grad = vec![0.0; params.values.len()];
    for l in (0..params.num_layers()).rev() {
        let (d_in, d_out) = (params.dims[l], params.dims[l + 1]);
        let (w_off, b_off) = layout[l];
        for r_ in 0..n {
            let dz = &delta[r_ * d_out..(r_ + 1) * d_out];
            for (gb, d) in grad[b_off..b_off + d_out].iter_mut().zip(dz) {
                *gb += d;
            }
            if l == 0 {
                for (j, v) in x.row(rows[r_]) {
                    let gw = &mut grad[w_off + j * d_out..w_off + (j + 1) * d_out];
                    for (g, d) in gw.iter_mut().zip(dz) {
                        *g += v * d;
                    }
                }
            } else {
                let h = &cache.hidden[l - 1][r_ * d_in..(r_ + 1) * d_in];
                for (j, &hv) in h.iter().enumerate() {
                    if hv == 0.0 {
                        continue;
                    }
                    let gw = &mut grad[w_off + j * d_out..w_off + (j + 1) * d_out];
                    for (g, d) in gw.iter_mut().zip(dz) {
                        *g += hv * d;
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        // propagate to the previous hidden layer through weights, dropout and ReLU
        let w = &params.values[w_off..b_off];
        let h = &cache.hidden[l - 1];
        let mask = &cache.masks[l - 1];
        let mut prev = vec![0.0; n * d_in];
        for r_ in 0..n {
            let dz = &delta[r_ * d_out..(r_ + 1) * d_out];
            for j in 0..d_in {
                let idx = r_ * d_in + j;
                // a zero output means either ReLU was inactive or dropout removed the unit
                if h[idx] == 0.0 {
                    continue;
                }
                let wr = &w[j * d_out..(j + 1) * d_out];
                let mut s = 0.0;
                for (wv, d) in wr.iter().zip(dz) {
                    s += wv * d;
                }
                prev[idx] = if mask.is_empty() { s } else { s * mask[idx] };
            }
        }
        delta = prev;
    }

    Ok((
        Objective {
            total: ce + config.lambda * r,
            cross_entropy: ce,
            penalty: if config.is_active() { r } else { 0.0 },
        },
        grad,
    ))
}

/// Adam settings; recorded in every training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        AdamSettings {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer and early-stopping state of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub adam: AdamSettings,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub best_validation: f64,
    pub since_improvement: usize,
    pub rng: Rng,
}

impl TrainState {
    pub fn new(num_params: usize, seed: u64) -> Self {
        TrainState {
            adam: AdamSettings::default(),
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step: 0,
            best_validation: f64::INFINITY,
            since_improvement: 0,
            rng: util::rng(seed),
        }
    }

    pub fn adam_step(&mut self, params: &mut [f64], grad: &[f64], learning_rate: f64) {
        let AdamSettings { beta1, beta2, epsilon } = self.adam;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }

    /// Records a validation objective; returns `(improved, stop)`.
    pub fn observe_validation(&mut self, value: f64, patience: usize) -> (bool, bool) {
        let improved = value < self.best_validation;
        if improved {
            self.best_validation = value;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        (improved, self.since_improvement >= patience)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub train_objective: f64,
    pub validation: Objective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub seed: u64,
    pub adam: AdamSettings,
    pub iterations: Vec<IterationRecord>,
    /// 1-based iteration whose parameters were returned.
    pub best_iteration: usize,
    pub stopped_early: bool,
    /// `"cross_entropy"` when lambda is 0, `"penalized"` otherwise.
    pub selection_metric: String,
}

impl TrainingLog {
    pub fn best(&self) -> Option<&IterationRecord> {
        self.iterations.get(self.best_iteration.checked_sub(1)?)
    }
}

/// Everything `train_rows` needs besides the row partition.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub x: &'a SparseMatrix,
    pub outcomes: &'a [u8],
    pub groups: &'a [usize],
    pub num_groups: usize,
}

impl<'a> TrainingData<'a> {
    fn labels_for(&self, rows: &[usize]) -> (Vec<u8>, Vec<usize>) {
        (
            rows.iter().map(|&i| self.outcomes[i]).collect(),
            rows.iter().map(|&i| self.groups[i]).collect(),
        )
    }
}

/// Trains on `train` rows with early stopping on `validation` rows.
///
/// The stopping and selection criterion is validation cross-entropy when
/// lambda is 0 and the penalized validation objective otherwise.
pub fn train_rows(
    data: TrainingData<'_>,
    train: &[usize],
    validation: &[usize],
    hp: &Hyperparameters,
    penalty: &PenaltyConfig,
    seed: u64,
) -> Result<(ModelParameters, TrainingLog)> {
    hp.validate()?;
    penalty.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training partition".into()));
    }
    if validation.is_empty() {
        return Err(Error::InsufficientData("empty validation partition".into()));
    }
    let mut init_rng = util::rng(util::mix_seed(seed, 1));
    let mut params = ModelParameters::init(data.x.dim, hp.hidden_dim, hp.num_hidden_layers, &mut init_rng);
    let mut state = TrainState::new(params.values.len(), util::mix_seed(seed, 2));
    let mut shuffle_rng = util::rng(util::mix_seed(seed, 3));

    let (val_y, val_a) = data.labels_for(validation);
    let val_labels = Labels {
        outcomes: &val_y,
        groups: &val_a,
        num_groups: data.num_groups,
    };

    let mut order = train.to_vec();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0;
    let mut best = params.clone();
    let mut log = TrainingLog {
        seed,
        adam: state.adam,
        iterations: Vec::new(),
        best_iteration: 0,
        stopped_early: false,
        selection_metric: if penalty.is_active() { "penalized" } else { "cross_entropy" }.into(),
    };

    for iteration in 1..=hp.max_iterations {
        let mut train_total = 0.0;
        for _ in 0..hp.batches_per_iteration {
            if cursor >= order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            let end = (cursor + hp.batch_size).min(order.len());
            let batch = &order[cursor..end];
            cursor = end;
            let (y, a) = data.labels_for(batch);
            let labels = Labels {
                outcomes: &y,
                groups: &a,
                num_groups: data.num_groups,
            };
            let mode = Mode::Train {
                dropout_prob: hp.dropout_prob,
                rng: &mut state.rng,
            };
            let (obj, grad) = penalized_loss_and_grad(&params, data.x, batch, labels, penalty, mode)?;
            train_total += obj.total;
            state.adam_step(&mut params.values, &grad, hp.learning_rate);
        }
        let val_lp = forward(&params, data.x, validation, Mode::Eval)?;
        let validation_objective = objective(&val_lp, val_labels, penalty)?;
        if !validation_objective.total.is_finite() {
            return Err(Error::InsufficientData(format!(
                "validation objective became non-finite at iteration {iteration}"
            )));
        }
        log.iterations.push(IterationRecord {
            iteration,
            train_objective: train_total / hp.batches_per_iteration as f64,
            validation: validation_objective,
        });
        let (improved, stop) = state.observe_validation(validation_objective.total, hp.patience);
        if improved {
            best.values.copy_from_slice(&params.values);
            log.best_iteration = iteration;
        }
        if stop {
            log.stopped_early = iteration < hp.max_iterations;
            break;
        }
    }
    Ok((best, log))
}

/// Trains fold `fold_index` of `split` on `cohort`.
pub fn train(
    cohort: &Cohort,
    split: &SplitPlan,
    fold_index: usize,
    hp: &Hyperparameters,
    penalty: &PenaltyConfig,
    seed: u64,
) -> Result<(ModelParameters, TrainingLog)> {
    let partition = split.partition(cohort, fold_index)?;
    let x = SparseMatrix::from_cohort(cohort);
    let outcomes = cohort.outcomes();
    let groups = cohort.groups();
    let data = TrainingData {
        x: &x,
        outcomes: &outcomes,
        groups: &groups,
        num_groups: cohort.num_groups(),
    };
    train_rows(data, &partition.train, &partition.validation, hp, penalty, seed)
}

pub const CHECKPOINT_FORMAT: &str = "fairrisk-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub library_version: String,
    pub hyperparameters: Hyperparameters,
    pub penalty: PenaltyConfig,
    pub params: ModelParameters,
    pub log: TrainingLog,
}

impl Checkpoint {
    pub fn new(hp: Hyperparameters, penalty: PenaltyConfig, params: ModelParameters, log: TrainingLog) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            library_version: crate::VERSION.into(),
            hyperparameters: hp,
            penalty,
            params,
            log,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        ckpt.params.validate()?;
        Ok(ckpt)
    }
}
