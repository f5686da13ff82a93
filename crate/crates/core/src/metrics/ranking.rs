//! Pairwise ranking metrics. Ties between a positive and a negative score count one half.

use std::cmp::Ordering;

/// Probability that a score from `positives` exceeds one from `negatives`,
/// counting ties as one half. `None` when either side is empty.
pub fn rank_probability(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let mut sorted = negatives.to_vec();
    sorted.sort_by(f64::total_cmp);
    // twice the win count, kept integral so the result is exact
    let mut doubled: u128 = 0;
    for &p in positives {
        let below = sorted.partition_point(|&v| v < p);
        let not_above = sorted.partition_point(|&v| v <= p);
        doubled += 2 * below as u128 + (not_above - below) as u128;
    }
    let pairs = positives.len() as f64 * negatives.len() as f64;
    Some(doubled as f64 / (2.0 * pairs))
}

/// Area under the ROC curve; `None` unless both classes are present.
pub fn auroc(scores: &[f64], outcomes: &[u8]) -> Option<f64> {
    let (pos, neg) = split_by_outcome(scores, outcomes, |_| true);
    rank_probability(&pos, &neg)
}

/// Probability that group `k`'s positives outrank the other groups' negatives
/// (`Direction::Positive`), or that the other groups' positives outrank group
/// `k`'s negatives (`Direction::Negative`).
pub fn xauc(scores: &[f64], outcomes: &[u8], groups: &[usize], k: usize, direction: Direction) -> Option<f64> {
    let (pos_in, neg_out, pos_out, neg_in) = {
        let mut sets = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for ((&s, &y), &g) in scores.iter().zip(outcomes).zip(groups) {
            match (y == 1, g == k) {
                (true, true) => sets.0.push(s),
                (false, false) => sets.1.push(s),
                (true, false) => sets.2.push(s),
                (false, true) => sets.3.push(s),
            }
        }
        sets
    };
    match direction {
        Direction::Positive => rank_probability(&pos_in, &neg_out),
        Direction::Negative => rank_probability(&pos_out, &neg_in),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Positive,
    Negative,
}

/// Step-wise average precision: the mean, over positives, of precision at
/// the positive's rank. Records are ranked by descending score; tied scores
/// keep their input order. `None` without positives.
pub fn average_precision(scores: &[f64], outcomes: &[u8]) -> Option<f64> {
    let n_pos = outcomes.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if outcomes[i] == 1 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(total / n_pos as f64)
}

pub(crate) fn split_by_outcome(
    scores: &[f64],
    outcomes: &[u8],
    keep: impl Fn(usize) -> bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, (&s, &y)) in scores.iter().zip(outcomes).enumerate() {
        if keep(i) {
            if y == 1 {
                pos.push(s);
            } else {
                neg.push(s);
            }
        }
    }
    (pos, neg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_extremes() {
        assert_eq!(auroc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]), Some(1.0));
        assert_eq!(auroc(&[0.1, 0.2, 0.9, 0.8], &[1, 1, 0, 0]), Some(0.0));
        assert_eq!(auroc(&[0.5; 6], &[1, 0, 1, 0, 0, 1]), Some(0.5));
        assert_eq!(auroc(&[0.3, 0.4], &[1, 1]), None);
    }

    #[test]
    fn average_precision_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[1, 0, 1]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.9, 0.8, 0.1, 0.05], &[1, 1, 0, 0]), Some(1.0));
        assert_eq!(average_precision(&[0.2, 0.1], &[0, 0]), None);
        // tie: the earlier record ranks first
        assert_eq!(average_precision(&[0.5, 0.5], &[0, 1]), Some(0.5));
    }

    #[test]
    fn xauc_needs_other_groups() {
        let s = [0.9, 0.1, 0.8, 0.2];
        let y = [1, 0, 1, 0];
        assert_eq!(xauc(&s, &y, &[0, 0, 0, 0], 0, Direction::Positive), None);
        assert_eq!(xauc(&s, &y, &[0, 0, 1, 1], 0, Direction::Positive), Some(1.0));
        assert_eq!(xauc(&s, &y, &[0, 0, 1, 1], 0, Direction::Negative), Some(1.0));
    }
}
