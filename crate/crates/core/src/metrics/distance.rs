use crate::error::{Error, Result};

/// 1-Wasserstein (earth mover's) distance between two empirical samples,
/// computed as the integral of `|F_a - F_b|` between consecutive support points.
pub fn emd_1d(sample_a: &[f64], sample_b: &[f64]) -> Result<f64> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::InsufficientData("EMD needs two nonempty samples".into()));
    }
    let mut a = sample_a.to_vec();
    let mut b = sample_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let scale = n as f64 * m as f64;
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < n || j < m {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let gap = (i as f64 * m as f64 - j as f64 * n as f64).abs() / scale;
        total += gap * (next - prev);
        while i < n && a[i] == next {
            i += 1;
        }
        while j < m && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}
