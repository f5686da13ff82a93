//! Limited-memory BFGS for small smooth problems.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 6,
            max_iterations: 500,
            gradient_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `objective`, which returns the value and gradient at a point.
pub fn minimize<F>(mut objective: F, x0: Vec<f64>, options: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut f, mut g) = objective(&x);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(options.memory);
    let mut iterations = 0;

    while iterations < options.max_iterations {
        let gnorm = norm(&g);
        if !gnorm.is_finite() {
            break;
        }
        if gnorm < options.gradient_tolerance {
            return LbfgsResult {
                x,
                iterations,
                converged: true,
            };
        }
        iterations += 1;

        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = history
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or(1.0 / gnorm.max(1.0));
        for qi in &mut q {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut direction: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &direction);
        if !(slope < 0.0) {
            history.clear();
            direction = g.iter().map(|v| -v / gnorm.max(1.0)).collect();
            slope = dot(&g, &direction);
        }

        // backtracking line search; near the optimum value differences drown
        // in rounding, so a step that reduces the gradient norm is also accepted
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate: Vec<f64> = x.iter().zip(&direction).map(|(xi, di)| xi + step * di).collect();
            let (fc, gc) = objective(&candidate);
            if fc.is_finite() {
                let armijo = fc <= f + 1e-4 * step * slope;
                let flat = fc <= f + 1e-12 * f.abs().max(1.0) && norm(&gc) < gnorm;
                if armijo || flat {
                    accepted = Some((candidate, fc, gc));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if history.len() == options.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }

    let converged = norm(&g) < options.gradient_tolerance;
    LbfgsResult {
        x,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let result = minimize(
            |p| {
                let (x, y) = (p[0], p[1]);
                let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
                let gx = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
                let gy = 200.0 * (y - x * x);
                (f, vec![gx, gy])
            },
            vec![-1.2, 1.0],
            &LbfgsOptions {
                gradient_tolerance: 1e-9,
                ..LbfgsOptions::default()
            },
        );
        assert!(result.converged, "{result:?}");
        assert!((result.x[0] - 1.0).abs() < 1e-6 && (result.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_converges_fast() {
        let result = minimize(
            |p| {
                let f = 3.0 * p[0] * p[0] + 0.5 * p[1] * p[1] + p[0] * p[1] - p[1];
                (f, vec![6.0 * p[0] + p[1], p[1] + p[0] - 1.0])
            },
            vec![4.0, -3.0],
            &LbfgsOptions::default(),
        );
        assert!(result.converged);
        assert!(result.iterations < 30);
        // solution of [6 1; 1 1] x = [0; 1]
        assert!((result.x[0] + 0.2).abs() < 1e-9 && (result.x[1] - 1.2).abs() < 1e-9);
    }
}
