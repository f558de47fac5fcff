//! Anisotropic parabolic capacity
//! `inf (‖φ‖_a + ‖φ_t‖_b + ‖∇φ‖_a + Σ_{i,j} ‖φ_{x_i x_j}‖_a)^a`
//! over grid functions with `φ ≥ level` on the set dilated by one cell.
//!
//! The unknown lives on a space-time window three times the set's bounding
//! box, with zero ghost values outside. Derivatives are forward differences
//! (first order, mixed second order) and centred second differences.
//! `‖∇φ‖_a` sums `|∂_i φ|^a` over the axes.

use serde::{Deserialize, Serialize};

use super::{CapacityEstimate, CapacityExponents, CapacityRoute, CompactSet, Window};
use crate::error::{Error, Result};
use crate::geometry::Layout;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParabolicOptions {
    /// Constraint level on the dilated set.
    pub level: f64,
    /// Relative projected-gradient tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ParabolicOptions {
    fn default() -> Self {
        Self {
            level: 1.0,
            tol: 1e-5,
            max_iter: 20_000,
        }
    }
}

pub fn parabolic_capacity(set: &CompactSet, a: f64, b: f64) -> Result<CapacityEstimate> {
    parabolic_capacity_with(set, a, b, &ParabolicOptions::default())
}

pub fn parabolic_capacity_with(
    set: &CompactSet,
    a: f64,
    b: f64,
    opts: &ParabolicOptions,
) -> Result<CapacityEstimate> {
    if !(a > 1.0 && a.is_finite() && b > 1.0 && b.is_finite()) {
        return Err(Error::Domain(format!(
            "exponents must exceed 1, got a = {a}, b = {b}"
        )));
    }
    if set.layout() != Layout::SpaceTime {
        return Err(Error::Config(
            "parabolic capacity needs a space-time set".into(),
        ));
    }
    if !(opts.level > 0.0 && opts.tol > 0.0 && opts.max_iter > 0) {
        return Err(Error::Config(format!("invalid optimizer options {opts:?}")));
    }
    let lat = set.lattice();
    let exps = CapacityExponents::Parabolic { a, b };
    if set.is_empty() {
        return Ok(CapacityEstimate::empty(
            exps,
            CapacityRoute::Parabolic,
            lat.h(),
        ));
    }
    let window = Window::around(set);
    let mut h = vec![lat.dt()];
    h.extend_from_slice(lat.widths());
    let norm = Norm::new(window.shape.clone(), h, a, b);
    let mask = dilated_mask(&window);
    let level = opts.level;
    let project = |x: &mut [f64]| {
        for (v, &m) in x.iter_mut().zip(&mask) {
            if m && *v < level {
                *v = level;
            }
        }
    };

    let n = window.len();
    let mut phi = smooth_start(&window, &mask, level);
    let (mut f, mut grad) = norm.value_and_gradient(&phi);
    let gmax = max_abs(&grad);
    let mut step = if gmax > 0.0 {
        max_abs(&phi) / gmax
    } else {
        1.0
    };
    let mut history = [f; 10];
    let mut trial = vec![0.0; n];
    let mut iterations = 0;
    let mut stationarity = f64::INFINITY;
    for it in 1..=opts.max_iter {
        iterations = it;
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = step;
        let (f_new, g_new) = loop {
            for i in 0..n {
                trial[i] = phi[i] - t * grad[i];
            }
            project(&mut trial);
            let descent: f64 = (0..n).map(|i| grad[i] * (trial[i] - phi[i])).sum();
            let (ft, gt) = norm.value_and_gradient(&trial);
            if ft <= reference + 1e-4 * descent || t < 1e-300 {
                break (ft, gt);
            }
            t *= 0.5;
        };
        let mut sy = 0.0;
        let mut ss = 0.0;
        let mut move_max = 0.0f64;
        for i in 0..n {
            let s = trial[i] - phi[i];
            sy += s * (g_new[i] - grad[i]);
            ss += s * s;
            move_max = move_max.max(s.abs());
        }
        std::mem::swap(&mut phi, &mut trial);
        grad = g_new;
        f = f_new;
        history[it % 10] = f;
        step = if sy > 0.0 { ss / sy } else { step * 2.0 };
        // Projected gradient at the BB scale, relative to the iterate.
        let mut pg = 0.0f64;
        for i in 0..n {
            let mut x = phi[i] - step * grad[i];
            if mask[i] && x < level {
                x = level;
            }
            pg = pg.max((x - phi[i]).abs());
        }
        stationarity = pg / max_abs(&phi);
        if stationarity <= opts.tol && move_max <= opts.tol * max_abs(&phi) {
            break;
        }
    }
    let residual = phi
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| (level - v).max(0.0))
        .fold(0.0, f64::max);
    Ok(CapacityEstimate {
        value: f,
        lower_bound: None,
        exponents: exps,
        route: CapacityRoute::Parabolic,
        iterations,
        feasibility_residual: residual,
        stationarity,
        converged: stationarity <= opts.tol,
        unknowns: n,
        h: lat.h(),
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Feasible start: `level` on the mask's bounding box, falling to zero at the
/// window edge by a product of cubic ramps.
fn smooth_start(window: &Window, mask: &[bool], level: f64) -> Vec<f64> {
    let d = window.shape.len();
    let mut lo = window.shape.clone();
    let mut hi = vec![0usize; d];
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (a, &v) in window.multi(i).iter().enumerate() {
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    let ramp = |x: f64| (1.0 - x) * (1.0 - x) * (1.0 + 2.0 * x);
    (0..window.len())
        .map(|i| {
            let m = window.multi(i);
            let mut v = level;
            for a in 0..d {
                let (dist, gap) = if m[a] < lo[a] {
                    (lo[a] - m[a], lo[a] + 1)
                } else if m[a] > hi[a] {
                    (m[a] - hi[a], window.shape[a] - hi[a])
                } else {
                    (0, 1)
                };
                v *= ramp(dist as f64 / gap as f64);
            }
            v
        })
        .collect()
}

/// Window cells within one cell (any direction) of a set cell.
fn dilated_mask(window: &Window) -> Vec<bool> {
    let mut mask = vec![false; window.len()];
    let d = window.shape.len();
    let neighbours = 3usize.pow(d as u32);
    for &c in &window.set_cells {
        let m = window.multi(c);
        for k in 0..neighbours {
            let mut rem = k;
            let mut idx = 0;
            let mut inside = true;
            for a in 0..d {
                let shift = (rem % 3) as isize - 1;
                rem /= 3;
                let v = m[a] as isize + shift;
                if v < 0 || v >= window.shape[a] as isize {
                    inside = false;
                    break;
                }
                idx += v as usize * window.strides[a];
            }
            if inside {
                mask[idx] = true;
            }
        }
    }
    mask
}

/// Strided view of one axis: `outer × n × inner`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Forward difference with zero ghosts: output has one more entry along `axis`.
fn diff(x: &[f64], shape: &[usize], axis: usize, h: f64) -> (Vec<f64>, Vec<usize>) {
    let (outer, n, inner) = split(shape, axis);
    let mut out_shape = shape.to_vec();
    out_shape[axis] += 1;
    let mut y = vec![0.0; outer * (n + 1) * inner];
    for o in 0..outer {
        for k in 0..=n {
            for i in 0..inner {
                let cur = if k < n {
                    x[(o * n + k) * inner + i]
                } else {
                    0.0
                };
                let prev = if k > 0 {
                    x[(o * n + k - 1) * inner + i]
                } else {
                    0.0
                };
                y[(o * (n + 1) + k) * inner + i] = (cur - prev) / h;
            }
        }
    }
    (y, out_shape)
}

/// Adjoint of [`diff`]; `shape` is the input shape of the forward map.
fn diff_adj(y: &[f64], shape: &[usize], axis: usize, h: f64) -> Vec<f64> {
    let (outer, n, inner) = split(shape, axis);
    let mut x = vec![0.0; outer * n * inner];
    for o in 0..outer {
        for k in 0..n {
            for i in 0..inner {
                let a = y[(o * (n + 1) + k) * inner + i];
                let b = y[(o * (n + 1) + k + 1) * inner + i];
                x[(o * n + k) * inner + i] = (a - b) / h;
            }
        }
    }
    x
}

struct Norm {
    shape: Vec<usize>,
    /// Axis 0 is time.
    h: Vec<f64>,
    vol: f64,
    a: f64,
    b: f64,
}

/// `‖y‖_p = (V Σ |y|^p)^{1/p}` and its gradient with respect to `y`.
fn lp(y: &[f64], vol: f64, p: f64) -> (f64, Vec<f64>) {
    let sum: f64 = y.iter().map(|v| v.abs().powf(p)).sum::<f64>() * vol;
    if sum == 0.0 {
        return (0.0, vec![0.0; y.len()]);
    }
    let norm = sum.powf(1.0 / p);
    let scale = vol * norm.powf(1.0 - p);
    let grad = y
        .iter()
        .map(|v| scale * v.abs().powf(p - 1.0) * v.signum())
        .collect();
    (norm, grad)
}

impl Norm {
    fn new(shape: Vec<usize>, h: Vec<f64>, a: f64, b: f64) -> Self {
        let vol = h.iter().product();
        Self {
            shape,
            h,
            vol,
            a,
            b,
        }
    }

    fn value_and_gradient(&self, phi: &[f64]) -> (f64, Vec<f64>) {
        let (a, b, vol) = (self.a, self.b, self.vol);
        let dims = self.shape.len();
        let mut total = 0.0;
        let mut grad = vec![0.0; phi.len()];
        let add = |g: &mut Vec<f64>, part: &[f64]| {
            for (x, y) in g.iter_mut().zip(part) {
                *x += y;
            }
        };

        let (n0, g0) = lp(phi, vol, a);
        total += n0;
        add(&mut grad, &g0);

        let (dt, shape_t) = diff(phi, &self.shape, 0, self.h[0]);
        let _ = shape_t;
        let (nt, gt) = lp(&dt, vol, b);
        total += nt;
        add(&mut grad, &diff_adj(&gt, &self.shape, 0, self.h[0]));

        // Spatial gradient as one norm over all axes.
        let firsts: Vec<(Vec<f64>, Vec<usize>)> = (1..dims)
            .map(|ax| diff(phi, &self.shape, ax, self.h[ax]))
            .collect();
        let sum: f64 = firsts
            .iter()
            .map(|(d, _)| d.iter().map(|v| v.abs().powf(a)).sum::<f64>())
            .sum::<f64>()
            * vol;
        if sum > 0.0 {
            let ng = sum.powf(1.0 / a);
            total += ng;
            let scale = vol * ng.powf(1.0 - a);
            for (k, (d, _)) in firsts.iter().enumerate() {
                let w: Vec<f64> = d
                    .iter()
                    .map(|v| scale * v.abs().powf(a - 1.0) * v.signum())
                    .collect();
                add(&mut grad, &diff_adj(&w, &self.shape, k + 1, self.h[k + 1]));
            }
        }

        for i in 1..dims {
            let (di, shape_i) = &firsts[i - 1];
            for j in 1..dims {
                if i == j {
                    // Centred second difference: -Dᵀ D φ.
                    let second: Vec<f64> = diff_adj(di, &self.shape, i, self.h[i])
                        .iter()
                        .map(|v| -v)
                        .collect();
                    let (n2, g2) = lp(&second, vol, a);
                    total += n2;
                    let (dg, _) = diff(&g2, &self.shape, i, self.h[i]);
                    let back: Vec<f64> = diff_adj(&dg, &self.shape, i, self.h[i])
                        .iter()
                        .map(|v| -v)
                        .collect();
                    add(&mut grad, &back);
                } else {
                    let (dij, _) = diff(di, shape_i, j, self.h[j]);
                    let (n2, g2) = lp(&dij, vol, a);
                    total += n2;
                    let back = diff_adj(&g2, shape_i, j, self.h[j]);
                    add(&mut grad, &diff_adj(&back, &self.shape, i, self.h[i]));
                }
            }
        }

        let value = total.powf(a);
        let factor = a * total.powf(a - 1.0);
        grad.iter_mut().for_each(|g| *g *= factor);
        (value, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoxDomain, GridSpec, Lattice};

    fn lattice(n: usize, steps: usize) -> Lattice {
        Lattice::new(
            BoxDomain::cube(2, 0.0, 1.0, 1.0).unwrap(),
            GridSpec::uniform(2, n, steps).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn diff_adjoint_identity() {
        let shape = vec![3, 4, 2];
        let x: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        for axis in 0..3 {
            let (dx, s2) = diff(&x, &shape, axis, 0.3);
            let y: Vec<f64> = (0..dx.len()).map(|i| (i as f64 * 0.91).cos()).collect();
            let lhs: f64 = dx.iter().zip(&y).map(|(a, b)| a * b).sum();
            let ax = diff_adj(&y, &shape, axis, 0.3);
            let rhs: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12, "axis {axis}");
            assert_eq!(s2[axis], shape[axis] + 1);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let norm = Norm::new(vec![3, 4, 4], vec![0.05, 0.2, 0.25], 2.5, 1.7);
        let phi: Vec<f64> = (0..48)
            .map(|i| ((i * 5 % 13) as f64 * 0.3).cos() + 0.2)
            .collect();
        let (_, g) = norm.value_and_gradient(&phi);
        for i in [0, 7, 20, 47] {
            let mut up = phi.clone();
            let mut dn = phi.clone();
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            let fd = (norm.value_and_gradient(&up).0 - norm.value_and_gradient(&dn).0) / 2e-6;
            assert!(
                (fd - g[i]).abs() < 1e-5 * fd.abs().max(1.0),
                "{i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn empty_set_is_zero() {
        let e = CompactSet::empty(lattice(4, 4), Layout::SpaceTime);
        assert_eq!(parabolic_capacity(&e, 2.0, 2.0).unwrap().value, 0.0);
    }

    #[test]
    fn doubling_level_scales_by_power() {
        let lat = lattice(8, 8);
        let set = CompactSet::new(lat.clone(), Layout::SpaceTime, vec![3 * 64 + 27]).unwrap();
        let a = 2.5;
        let one = parabolic_capacity_with(&set, a, 1.5, &ParabolicOptions::default()).unwrap();
        let two = parabolic_capacity_with(
            &set,
            a,
            1.5,
            &ParabolicOptions {
                level: 2.0,
                ..Default::default()
            },
        )
        .unwrap();
        let ratio = two.value / one.value;
        assert!((ratio / 2f64.powf(a) - 1.0).abs() < 1e-12, "{ratio}");
        assert_eq!(one.iterations, two.iterations);
        assert!(one.converged);
        assert!(one.feasibility_residual <= 1e-3);
    }
}
