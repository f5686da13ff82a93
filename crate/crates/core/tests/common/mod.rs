//! Literal, definition-level reimplementations used as test oracles.
#![allow(dead_code)]

use fairrisk::cohort::{Cohort, CohortRecord, GroupAttribute};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fraction of (positive, negative) pairs ordered correctly, ties one half.
pub fn pairwise_oracle(pos: &[f64], neg: &[f64]) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

pub fn auroc_oracle(scores: &[f64], y: &[u8]) -> Option<f64> {
    let pos: Vec<f64> = (0..y.len()).filter(|&i| y[i] == 1).map(|i| scores[i]).collect();
    let neg: Vec<f64> = (0..y.len()).filter(|&i| y[i] == 0).map(|i| scores[i]).collect();
    pairwise_oracle(&pos, &neg)
}

/// xAUC for group `k`: positives of `k` against negatives elsewhere when
/// `positive`, else positives elsewhere against negatives of `k`.
pub fn xauc_oracle(scores: &[f64], y: &[u8], g: &[usize], k: usize, positive: bool) -> Option<f64> {
    let pick = |want_y: u8, in_k: bool| -> Vec<f64> {
        (0..y.len())
            .filter(|&i| y[i] == want_y && (g[i] == k) == in_k)
            .map(|i| scores[i])
            .collect()
    };
    if positive {
        pairwise_oracle(&pick(1, true), &pick(0, false))
    } else {
        pairwise_oracle(&pick(1, false), &pick(0, true))
    }
}

/// Mean over positives of the precision among records ranked at or above
/// it, ranking by descending score and then by input position.
pub fn ap_oracle(scores: &[f64], y: &[u8]) -> Option<f64> {
    let n_pos = y.iter().filter(|&&v| v == 1).count();
    if n_pos == 0 {
        return None;
    }
    let mut total = 0.0;
    for i in 0..y.len() {
        if y[i] != 1 {
            continue;
        }
        let above: Vec<usize> = (0..y.len())
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i))
            .collect();
        let hits = above.iter().filter(|&&j| y[j] == 1).count();
        total += hits as f64 / above.len() as f64;
    }
    Some(total / n_pos as f64)
}

fn kernel(u: f64, v: f64, sigma: f64) -> f64 {
    (-(u - v).powi(2) / (2.0 * sigma * sigma)).exp()
}

/// Biased squared MMD by explicit double sums.
pub fn mmd_oracle(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let mean_k = |x: &[f64], y: &[f64]| {
        let mut s = 0.0;
        for &u in x {
            for &v in y {
                s += kernel(u, v, sigma);
            }
        }
        s / (x.len() * y.len()) as f64
    };
    mean_k(a, a) + mean_k(b, b) - 2.0 * mean_k(a, b)
}

fn ecdf(sample: &[f64], t: f64) -> f64 {
    sample.iter().filter(|&&v| v <= t).count() as f64 / sample.len() as f64
}

/// `integral |F_a - F_b|` evaluated exactly on the grid of all sample
/// points, where both empirical CDFs are constant between grid nodes.
pub fn emd_cdf_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut grid: Vec<f64> = a.iter().chain(b).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid.windows(2)
        .map(|w| (ecdf(a, w[0]) - ecdf(b, w[0])).abs() * (w[1] - w[0]))
        .sum()
}

/// Riemann sum of `|F_a - F_b|` on a uniform grid of `steps` cells.
pub fn emd_grid_oracle(a: &[f64], b: &[f64], steps: usize) -> f64 {
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let h = (hi - lo) / steps as f64;
    (0..steps)
        .map(|i| {
            let t = lo + (i as f64 + 0.5) * h;
            (ecdf(a, t) - ecdf(b, t)).abs() * h
        })
        .sum()
}

/// Regularizer recomputed stratum by stratum from its definition.
pub fn regularizer_oracle(
    scores: &[f64],
    y: &[u8],
    g: &[usize],
    num_groups: usize,
    strata: &[Option<u8>],
    sigma: Option<f64>,
) -> f64 {
    let mut total = 0.0;
    for &stratum in strata {
        let marginal: Vec<f64> = (0..scores.len())
            .filter(|&i| stratum.is_none_or(|s| y[i] == s))
            .map(|i| scores[i])
            .collect();
        for k in 0..num_groups {
            let cell: Vec<f64> = (0..scores.len())
                .filter(|&i| stratum.is_none_or(|s| y[i] == s) && g[i] == k)
                .map(|i| scores[i])
                .collect();
            if cell.len() < 2 {
                continue;
            }
            total += match sigma {
                Some(s) => mmd_oracle(&cell, &marginal, s),
                None => {
                    let d = cell.iter().sum::<f64>() / cell.len() as f64
                        - marginal.iter().sum::<f64>() / marginal.len() as f64;
                    d * d
                }
            };
        }
    }
    total
}

/// Random labelled instance: `n` scores in (0, 1) drawn from a small set of
/// levels when `tied`, outcomes, and `k` groups.
pub fn fuzz_instance(r: &mut ChaCha8Rng, n: usize, k: usize, tied: bool) -> (Vec<f64>, Vec<u8>, Vec<usize>) {
    let levels = r.gen_range(2..8);
    let scores = (0..n)
        .map(|_| {
            if tied {
                (r.gen_range(0..levels) as f64 + 0.5) / levels as f64
            } else {
                r.gen_range(0.001..0.999)
            }
        })
        .collect();
    let rate = r.gen_range(0.05..0.6);
    let y = (0..n).map(|_| u8::from(r.gen_bool(rate))).collect();
    let g = (0..n).map(|_| r.gen_range(0..k)).collect();
    (scores, y, g)
}

/// Cohort with one record per entry of `outcomes` and `groups`, each carrying
/// feature `i % vocab_size`.
pub fn toy_cohort(outcomes: &[u8], groups: &[usize], group_names: &[&str], vocab_size: usize) -> Cohort {
    let attribute = GroupAttribute::new("attr", group_names.iter().map(|s| s.to_string()).collect()).unwrap();
    let records = outcomes
        .iter()
        .zip(groups)
        .enumerate()
        .map(|(i, (&y, &g))| CohortRecord {
            record_id: format!("r{i:05}"),
            features: vec![(i % vocab_size) as u32],
            outcome: y,
            group: g,
            true_probability: None,
        })
        .collect();
    Cohort::new(attribute, vocab_size, records).unwrap()
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
