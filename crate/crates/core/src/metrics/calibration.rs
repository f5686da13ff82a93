//! Logistic recalibration curves and the calibration errors built on them.
//!
//! A [`Calibrator`] is the one-feature logistic model
//! `g(f) = sigmoid(slope * ln f + intercept)` fit by maximum likelihood with
//! L-BFGS. Predictions are clamped to `[1e-15, 1 - 1e-15]` before the log.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lbfgs::{self, LbfgsOptions};
use crate::util::{logit, sigmoid, softplus};

pub const CLAMP_EPS: f64 = 1e-15;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 500;

pub fn clamp_probability(f: f64) -> f64 {
    f.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    pub slope: f64,
    pub intercept: f64,
    pub iterations: usize,
    /// Norm of the mean log-likelihood gradient at the returned parameters.
    pub gradient_norm: f64,
    /// False when the fit did not reach [`GRADIENT_TOLERANCE`] within [`MAX_ITERATIONS`].
    pub converged: bool,
}

impl Calibrator {
    pub fn predict(&self, f: f64) -> f64 {
        sigmoid(self.slope * clamp_probability(f).ln() + self.intercept)
    }
}

/// Mean negative log-likelihood and gradient in `(slope, intercept)` for
/// features `x`, with the slope acting on `x - shift`.
fn nll(params: &[f64], x: &[f64], y: &[u8], shift: f64) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let (mut value, mut gw, mut gb) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let xc = xi - shift;
        let z = params[0] * xc + params[1];
        let yf = yi as f64;
        value += softplus(z) - yf * z;
        let r = sigmoid(z) - yf;
        gw += r * xc;
        gb += r;
    }
    (value / n, vec![gw / n, gb / n])
}

/// Fits `P(y = 1 | f)` by logistic regression on `ln f`.
///
/// When every clamped `ln f` is identical the slope is unidentifiable; the
/// fit then returns slope 0 and intercept `logit(mean y)`.
pub fn fit_calibrator(predictions: &[f64], outcomes: &[u8]) -> Result<Calibrator> {
    if predictions.len() != outcomes.len() {
        return Err(Error::Shape {
            expected: predictions.len(),
            got: outcomes.len(),
        });
    }
    let positives = outcomes.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == outcomes.len() {
        return Err(Error::Calibration("calibrator needs both outcome classes".into()));
    }
    let x: Vec<f64> = predictions.iter().map(|&f| clamp_probability(f).ln()).collect();
    let rate = positives as f64 / outcomes.len() as f64;
    if x.iter().all(|&v| v == x[0]) {
        return Ok(Calibrator {
            slope: 0.0,
            intercept: logit(rate),
            iterations: 0,
            gradient_norm: 0.0,
            converged: true,
        });
    }

    // optimize with a centred feature, then undo the shift
    let shift = crate::util::mean(&x);
    let result = lbfgs::minimize(
        |p| nll(p, &x, outcomes, shift),
        vec![0.0, logit(rate)],
        &LbfgsOptions {
            max_iterations: MAX_ITERATIONS,
            gradient_tolerance: GRADIENT_TOLERANCE * 1e-2,
            ..LbfgsOptions::default()
        },
    );
    log::debug!("calibrator fit: {} iterations, optimizer converged {}", result.iterations, result.converged);
    let slope = result.x[0];
    let intercept = result.x[1] - slope * shift;
    let (_, grad) = nll(&[slope, intercept], &x, outcomes, 0.0);
    let gradient_norm = grad[0].hypot(grad[1]);
    // no finite maximizer exists when the classes are separated in ln f
    let separated = separated(&x, outcomes);
    let calibrator = Calibrator {
        slope,
        intercept,
        iterations: result.iterations,
        gradient_norm,
        converged: !separated
            && gradient_norm < GRADIENT_TOLERANCE
            && slope.is_finite()
            && intercept.is_finite(),
    };
    if !calibrator.converged {
        log::warn!(
            "calibrator did not converge after {} iterations (gradient norm {gradient_norm:e})",
            result.iterations
        );
    }
    Ok(calibrator)
}

fn separated(x: &[f64], outcomes: &[u8]) -> bool {
    let range = |class: u8| {
        x.iter()
            .zip(outcomes)
            .filter(|(_, &y)| y == class)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)))
    };
    let (neg_lo, neg_hi) = range(0);
    let (pos_lo, pos_hi) = range(1);
    neg_hi <= pos_lo || pos_hi <= neg_lo
}

/// Mean of `(g(f) - f)^2`, or of `g(f) - f` when `signed`.
pub fn ace_with(calibrator: &Calibrator, predictions: &[f64], signed: bool) -> f64 {
    mean_gap(predictions.iter().map(|&f| calibrator.predict(f) - f), signed)
}

/// Absolute calibration error of `predictions` under a calibrator fit on `(predictions, outcomes)`.
/// A positive signed value means risk is under-predicted.
pub fn ace(predictions: &[f64], outcomes: &[u8], signed: bool) -> Result<f64> {
    let calibrator = fit_calibrator(predictions, outcomes)?;
    Ok(ace_with(&calibrator, predictions, signed))
}

/// Mean over `predictions` of `(g_k(f) - g_all(f))^2`, or the signed gap.
pub fn rce_with(group: &Calibrator, marginal: &Calibrator, predictions: &[f64], signed: bool) -> f64 {
    mean_gap(predictions.iter().map(|&f| group.predict(f) - marginal.predict(f)), signed)
}

/// Relative calibration error of group `k`: a calibrator fit on group `k`
/// against one fit on all records, averaged over group `k`'s records.
/// `None` when group `k` lacks either outcome class.
pub fn rce(
    predictions: &[f64],
    outcomes: &[u8],
    groups: &[usize],
    k: usize,
    signed: bool,
) -> Result<Option<f64>> {
    if groups.len() != predictions.len() {
        return Err(Error::Shape {
            expected: predictions.len(),
            got: groups.len(),
        });
    }
    let marginal = fit_calibrator(predictions, outcomes)?;
    let (fk, yk): (Vec<f64>, Vec<u8>) = predictions
        .iter()
        .zip(outcomes)
        .zip(groups)
        .filter(|(_, &g)| g == k)
        .map(|((&f, &y), _)| (f, y))
        .unzip();
    let group = match fit_calibrator(&fk, &yk) {
        Ok(c) => c,
        Err(Error::Calibration(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    Ok(Some(rce_with(&group, &marginal, &fk, signed)))
}

fn mean_gap(gaps: impl Iterator<Item = f64>, signed: bool) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for gap in gaps {
        total += if signed { gap } else { gap * gap };
        n += 1;
    }
    total / n as f64
}
