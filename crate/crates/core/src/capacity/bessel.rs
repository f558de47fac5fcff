//! Bessel capacity `inf { ‖g‖_s^s : g ≥ 0, G_α ∗ g ≥ 1 on E }` on the grid.
//!
//! Both routes work with the dual over multipliers `λ ≥ 0` on the cells of
//! `E`: for a multiplier the best density is `g = (Kᵀλ / (sV))^{1/(s-1)}`,
//! the dual value `Σλ - (s-1) V Σ g^s` is a lower bound, and rescaling `g`
//! until `Kg ≥ 1` on `E` gives a feasible point whose objective is reported.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::nnqp::nnqp;
use super::{CapacityEstimate, CapacityExponents, CapacityRoute, CompactSet, Window};
use crate::error::{Error, Result};
use crate::geometry::Layout;
use crate::potentials::{BesselProfile, BesselTable};

const GAP_TOL: f64 = 1e-8;
const MAX_ITER: usize = 50_000;
/// Largest violated multiplier gradient accepted from the active-set solve.
const KKT_TOL: f64 = 1e-9;

fn check_args(set: &CompactSet, alpha: f64, s: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!(
            "order must be positive, got {alpha}"
        )));
    }
    if !(s > 1.0 && s.is_finite()) {
        return Err(Error::Domain(format!("exponent must exceed 1, got {s}")));
    }
    if set.layout() != Layout::Space {
        return Err(Error::Config("Bessel capacity needs a spatial set".into()));
    }
    Ok(())
}

/// Estimate on the default route: the free-space dual when `s = 2` and
/// `2α > N` (the kernel `G_{2α}` is then bounded), the window otherwise.
pub fn bessel_capacity(set: &CompactSet, alpha: f64, s: f64) -> Result<CapacityEstimate> {
    check_args(set, alpha, s)?;
    if s == 2.0 && 2.0 * alpha > set.lattice().dim() as f64 {
        bessel_capacity_free_space(set, alpha)
    } else {
        bessel_capacity_window(set, alpha, s)
    }
}

/// Density restricted to a window three times the set's bounding box.
pub fn bessel_capacity_window(set: &CompactSet, alpha: f64, s: f64) -> Result<CapacityEstimate> {
    check_args(set, alpha, s)?;
    let exps = CapacityExponents::Bessel { alpha, s };
    let lat = set.lattice();
    if set.is_empty() {
        return Ok(CapacityEstimate::empty(
            exps,
            CapacityRoute::Window,
            lat.h(),
        ));
    }
    let window = Window::around(set);
    let profile = BesselProfile::new(alpha, lat.dim())?;
    let table = BesselTable::new(&profile, lat.widths(), &window.shape);
    let vol = lat.cell_volume();
    let nw = window.len();
    let cols: Vec<Vec<isize>> = (0..nw)
        .map(|i| window.multi(i).iter().map(|&v| v as isize).collect())
        .collect();
    let k: Vec<Vec<f64>> = window
        .set_cells
        .par_iter()
        .map(|&j| {
            let oj: Vec<isize> = window.multi(j).iter().map(|&v| v as isize).collect();
            let mut off = vec![0isize; oj.len()];
            cols.iter()
                .map(|oi| {
                    for a in 0..oj.len() {
                        off[a] = oj[a] - oi[a];
                    }
                    vol * table.get(&off)
                })
                .collect()
        })
        .collect();
    let dual = WindowDual { k, vol, alpha, s };
    let (lambda, iterations, converged) = if s == 2.0 {
        let ne = dual.k.len();
        let rows: Vec<Vec<f64>> = (0..ne)
            .into_par_iter()
            .map(|a| {
                (0..ne)
                    .map(|b| dot(&dual.k[a], &dual.k[b]) / (2.0 * vol))
                    .collect()
            })
            .collect();
        let q = DMatrix::from_fn(ne, ne, |a, b| rows[a][b]);
        let sol = nnqp(&q, &vec![1.0; ne]).ok_or_else(|| Error::Solver {
            step: 0,
            reason: "Gram matrix is not positive definite".into(),
        })?;
        let ok = sol.kkt <= KKT_TOL;
        (sol.x, sol.iterations, ok)
    } else {
        dual.ascend()
    };
    let mut est = dual.certificate(&lambda)?;
    est.iterations = iterations;
    est.converged = converged && est.stationarity <= GAP_TOL.max(1e-6);
    est.unknowns = nw;
    est.h = lat.h();
    Ok(est)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct WindowDual {
    /// Rows: set cells; columns: window cells; `V·Ḡ(j − i)`.
    k: Vec<Vec<f64>>,
    vol: f64,
    alpha: f64,
    s: f64,
}

impl WindowDual {
    fn density(&self, lambda: &[f64]) -> Vec<f64> {
        let nw = self.k[0].len();
        let mut w = vec![0.0; nw];
        for (row, &l) in self.k.iter().zip(lambda) {
            if l != 0.0 {
                for (wi, r) in w.iter_mut().zip(row) {
                    *wi += l * r;
                }
            }
        }
        let e = 1.0 / (self.s - 1.0);
        w.iter()
            .map(|&x| (x.max(0.0) / (self.s * self.vol)).powf(e))
            .collect()
    }

    fn apply(&self, g: &[f64]) -> Vec<f64> {
        self.k.iter().map(|row| dot(row, g)).collect()
    }

    fn dual_value(&self, lambda: &[f64], g: &[f64]) -> f64 {
        lambda.iter().sum::<f64>()
            - (self.s - 1.0) * self.vol * g.iter().map(|x| x.powf(self.s)).sum::<f64>()
    }

    fn certificate(&self, lambda: &[f64]) -> Result<CapacityEstimate> {
        let g = self.density(lambda);
        let kg = self.apply(&g);
        let min = kg.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::Solver {
                step: 0,
                reason: "dual multipliers give no feasible density".into(),
            });
        }
        let c = 1.0 / min;
        let value = self.vol * g.iter().map(|x| (c * x).powf(self.s)).sum::<f64>();
        // Weak duality; clamp the last-ulp excess once the gap has closed.
        let lower = self.dual_value(lambda, &g).max(0.0).min(value);
        let residual = kg
            .iter()
            .map(|v| (1.0 - c * v).max(0.0))
            .fold(0.0, f64::max);
        Ok(CapacityEstimate {
            value,
            lower_bound: Some(lower),
            exponents: CapacityExponents::Bessel {
                alpha: self.alpha,
                s: self.s,
            },
            route: CapacityRoute::Window,
            iterations: 0,
            feasibility_residual: residual,
            stationarity: (value - lower) / value,
            converged: true,
            unknowns: 0,
            h: 0.0,
        })
    }

    /// Spectral projected gradient ascent on the dual.
    fn ascend(&self) -> (Vec<f64>, usize, bool) {
        let ne = self.k.len();
        // Best multiple of the all-ones multiplier.
        let ones = vec![1.0; ne];
        let g1 = self.density(&ones);
        let sum_gs: f64 = g1.iter().map(|x| x.powf(self.s)).sum();
        let t = (ne as f64 / (self.s * self.vol * sum_gs)).powf(self.s - 1.0);
        let mut lambda = vec![t; ne];
        let g = self.density(&lambda);
        let value = self.dual_value(&lambda, &g);
        let mut grad: Vec<f64> = self.apply(&g).iter().map(|v| 1.0 - v).collect();
        let mut step = 1.0 / grad.iter().fold(1e-300f64, |m, v| m.max(v.abs())) * t;
        let mut history = vec![value; 10];
        for it in 1..=MAX_ITER {
            let mut trial;
            let mut lam_step = step;
            loop {
                trial = lambda
                    .iter()
                    .zip(&grad)
                    .map(|(l, d)| (l + lam_step * d).max(0.0))
                    .collect::<Vec<_>>();
                let g_t = self.density(&trial);
                let v_t = self.dual_value(&trial, &g_t);
                let gain: f64 = trial
                    .iter()
                    .zip(&lambda)
                    .zip(&grad)
                    .map(|((a, b), d)| (a - b) * d)
                    .sum();
                // Nonmonotone: compare with the worst of the recent values.
                let reference = history.iter().copied().fold(f64::INFINITY, f64::min);
                if v_t >= reference + 1e-4 * gain || lam_step < 1e-30 {
                    let grad_t: Vec<f64> = self.apply(&g_t).iter().map(|v| 1.0 - v).collect();
                    let sk: Vec<f64> = trial.iter().zip(&lambda).map(|(a, b)| a - b).collect();
                    let yk: Vec<f64> = grad.iter().zip(&grad_t).map(|(a, b)| a - b).collect();
                    let sy = dot(&sk, &yk);
                    step = if sy > 0.0 {
                        dot(&sk, &sk) / sy
                    } else {
                        step * 2.0
                    };
                    lambda = trial;
                    grad = grad_t;
                    history[it % 10] = v_t;
                    break;
                }
                lam_step *= 0.5;
            }
            if it % 25 == 0 {
                if let Ok(c) = self.certificate(&lambda) {
                    if c.stationarity <= GAP_TOL {
                        return (lambda, it, true);
                    }
                }
            }
        }
        (lambda, MAX_ITER, false)
    }
}

/// `s = 2` estimate with densities on all of `R^N`.
///
/// The dual only involves the cell-pair averages of `G_α ∗ G_α = G_{2α}`
/// over the set, computed by tent-weighted sampling of the offset between two
/// uniform points in the two cells. Requires `2α > N` so that `G_{2α}` is
/// bounded.
pub fn bessel_capacity_free_space(set: &CompactSet, alpha: f64) -> Result<CapacityEstimate> {
    check_args(set, alpha, 2.0)?;
    let lat = set.lattice();
    let dim = lat.dim();
    if !(2.0 * alpha > dim as f64) {
        return Err(Error::Domain(format!(
            "free-space route needs 2α > N, got α = {alpha}, N = {dim}"
        )));
    }
    let exps = CapacityExponents::Bessel { alpha, s: 2.0 };
    if set.is_empty() {
        return Ok(CapacityEstimate::empty(
            exps,
            CapacityRoute::FreeSpace,
            lat.h(),
        ));
    }
    let profile = BesselProfile::new(2.0 * alpha, dim)?;
    let widths = lat.widths().to_vec();
    let idx: Vec<Vec<isize>> = set
        .cells()
        .iter()
        .map(|&c| set.multi(c).iter().map(|&v| v as isize).collect())
        .collect();
    let n = idx.len();
    let mut cache = std::collections::HashMap::new();
    let mut p = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let off: Vec<usize> = (0..dim)
                .map(|d| (idx[a][d] - idx[b][d]).unsigned_abs())
                .collect();
            let v = *cache
                .entry(off.clone())
                .or_insert_with(|| pair_average(&profile, &off, &widths));
            p[(a, b)] = v;
            p[(b, a)] = v;
        }
    }
    let q = &p * 0.5;
    let sol = nnqp(&q, &vec![1.0; n]).ok_or_else(|| Error::Solver {
        step: 0,
        reason: "pair-averaged kernel matrix is not positive definite".into(),
    })?;
    let lambda = &sol.x;
    let lam = nalgebra::DVector::from_column_slice(lambda);
    let plam = &p * &lam;
    let energy = 0.25 * lam.dot(&plam);
    let min = plam.iter().map(|v| 0.5 * v).fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::Solver {
            step: 0,
            reason: "dual multipliers give no feasible density".into(),
        });
    }
    let c = 1.0 / min;
    let value = c * c * energy;
    let lower = (lambda.iter().sum::<f64>() - energy).max(0.0);
    Ok(CapacityEstimate {
        value,
        lower_bound: Some(lower),
        exponents: exps,
        route: CapacityRoute::FreeSpace,
        iterations: sol.iterations,
        feasibility_residual: plam
            .iter()
            .map(|v| (1.0 - 0.5 * c * v).max(0.0))
            .fold(0.0, f64::max),
        stationarity: (value - lower) / value,
        converged: sol.kkt <= KKT_TOL,
        unknowns: n,
        h: lat.h(),
    })
}

/// Mean of `G(x - y)` for `x`, `y` uniform in two cells `off` cells apart.
fn pair_average(profile: &BesselProfile, off: &[usize], widths: &[f64]) -> f64 {
    let centre: f64 = off
        .iter()
        .zip(widths)
        .map(|(&o, &w)| (o as f64 * w).powi(2))
        .sum::<f64>()
        .sqrt();
    if off.iter().any(|&o| o >= 3) {
        return profile.value(centre);
    }
    // Differences of m midpoints per axis: k·w/m with weight (m − |k|)/m².
    const M: isize = 8;
    let dim = off.len();
    let per_axis = (2 * M - 1) as usize;
    let total = per_axis.pow(dim as u32);
    let mut acc = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        let mut weight = 1.0;
        let mut r2 = 0.0;
        for d in 0..dim {
            let k = (rem % per_axis) as isize - (M - 1);
            rem /= per_axis;
            weight *= (M - k.abs()) as f64 / (M * M) as f64;
            let z = (off[d] as f64 + k as f64 / M as f64) * widths[d];
            r2 += z * z;
        }
        let v = if r2 > 0.0 {
            profile.value(r2.sqrt())
        } else {
            profile.value(1e-12)
        };
        acc += weight * v;
    }
    acc
}
