//! Dense nonnegative quadratic programs by the Lawson-Hanson active set.

use nalgebra::{DMatrix, DVector};

pub(crate) struct NnqpSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Largest positive entry of `c - Qx` over the zero coordinates.
    pub kkt: f64,
}

fn solve_free(q: &DMatrix<f64>, c: &[f64], free: &[usize]) -> Option<Vec<f64>> {
    let k = free.len();
    let mut sub = DMatrix::from_fn(k, k, |r, s| q[(free[r], free[s])]);
    let rhs = DVector::from_iterator(k, free.iter().map(|&i| c[i]));
    let trace: f64 = (0..k).map(|i| sub[(i, i)]).sum::<f64>() / k as f64;
    for ridge in [0.0, 1e-14, 1e-12, 1e-10] {
        if ridge > 0.0 {
            for i in 0..k {
                sub[(i, i)] += ridge * trace;
            }
        }
        if let Some(ch) = sub.clone().cholesky() {
            return Some(ch.solve(&rhs).iter().copied().collect());
        }
    }
    None
}

/// Minimizes `½ xᵀQx − cᵀx` over `x ≥ 0` for symmetric positive definite `Q`.
pub(crate) fn nnqp(q: &DMatrix<f64>, c: &[f64]) -> Option<NnqpSolution> {
    let n = c.len();
    let mut x = vec![0.0; n];
    let mut free: Vec<usize> = Vec::new();
    let scale = c
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let tol = 1e-13 * scale;
    let mut iterations = 0;
    let max_outer = 3 * n + 10;
    let gradient = |x: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| c[i] - (0..n).map(|j| q[(i, j)] * x[j]).sum::<f64>())
            .collect()
    };
    for _ in 0..max_outer {
        let w = gradient(&x);
        let pick = (0..n)
            .filter(|i| !free.contains(i))
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        match pick {
            Some(j) if w[j] > tol => free.push(j),
            _ => break,
        }
        loop {
            iterations += 1;
            let z = solve_free(q, c, &free)?;
            if z.iter().all(|&v| v > 0.0) {
                for (&i, &v) in free.iter().zip(&z) {
                    x[i] = v;
                }
                break;
            }
            let mut step = 1.0f64;
            for (&i, &v) in free.iter().zip(&z) {
                if v <= 0.0 {
                    step = step.min(x[i] / (x[i] - v));
                }
            }
            for (&i, &v) in free.iter().zip(&z) {
                x[i] += step * (v - x[i]);
            }
            free.retain(|&i| {
                if x[i] <= 1e-15 * scale {
                    x[i] = 0.0;
                    false
                } else {
                    true
                }
            });
            if free.is_empty() {
                break;
            }
        }
    }
    let w = gradient(&x);
    let kkt = (0..n)
        .filter(|i| !free.contains(i))
        .map(|i| w[i])
        .fold(0.0f64, f64::max);
    Some(NnqpSolution { x, iterations, kkt })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_optimum_when_positive() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let sol = nnqp(&q, &[1.0, 1.0]).unwrap();
        // Q x = c
        let x = sol.x;
        assert!((2.0 * x[0] + 0.5 * x[1] - 1.0).abs() < 1e-12);
        assert!((0.5 * x[0] + x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn active_bound() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let sol = nnqp(&q, &[1.0, 0.5]).unwrap();
        assert_eq!(sol.x[1], 0.0);
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!(sol.kkt <= 1e-12);
    }

    #[test]
    fn matches_brute_force_on_small_problem() {
        let a = DMatrix::from_fn(4, 4, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let q = &a * a.transpose() + DMatrix::identity(4, 4) * 0.1;
        let c = [1.0, -2.0, 0.5, 3.0];
        let sol = nnqp(&q, &c).unwrap();
        let obj = |x: &[f64]| {
            let v = DVector::from_column_slice(x);
            0.5 * (v.transpose() * &q * &v)[0] - c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        };
        let best = obj(&sol.x);
        // Every face of the orthant: solve the free system and keep feasible points.
        for mask in 1..16usize {
            let free: Vec<usize> = (0..4).filter(|i| mask >> i & 1 == 1).collect();
            if let Some(z) = solve_free(&q, &c, &free) {
                if z.iter().all(|&v| v >= 0.0) {
                    let mut x = vec![0.0; 4];
                    for (&i, &v) in free.iter().zip(&z) {
                        x[i] = v;
                    }
                    assert!(obj(&x) >= best - 1e-12);
                }
            }
        }
    }
}
