//! Oracles shared by the integration tests.
#![allow(dead_code)]

use dplab_core::{GridField, Lattice, SolveResult};

/// Explicit five-point heat scheme on the cell-centred lattice with the
/// wall half a cell away from the boundary centres (ghost value `-u`).
pub fn explicit_heat(lattice: &Lattice, u0: &[f64], t_end: f64) -> Vec<f64> {
    let shape = lattice.shape().to_vec();
    let w = lattice.widths().to_vec();
    let h2 = w.iter().map(|h| h * h).fold(f64::INFINITY, f64::min);
    let steps = (t_end / (0.2 * h2)).ceil() as usize;
    let dt = t_end / steps as f64;
    let mut u = u0.to_vec();
    let mut next = u.clone();
    let n = u.len();
    for _ in 0..steps {
        for i in 0..n {
            let mut lap = 0.0;
            for a in 0..shape.len() {
                let up = lattice.neighbor(i, a, true).map_or(-u[i], |j| u[j]);
                let dn = lattice.neighbor(i, a, false).map_or(-u[i], |j| u[j]);
                lap += (up - 2.0 * u[i] + dn) / (w[a] * w[a]);
            }
            next[i] = u[i] + dt * lap;
        }
        std::mem::swap(&mut u, &mut next);
    }
    u
}

pub fn bump_field(lattice: &Lattice) -> GridField {
    GridField::from_fn_space(lattice.clone(), |x| {
        let r2: f64 = x.iter().map(|v| (v - 0.1) * (v - 0.1)).sum();
        (1.0 - r2 / 0.36).max(0.0).powi(3) * 4.0
    })
}

pub fn l1_rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    let den: f64 = b.iter().map(|y| y.abs()).sum();
    num / den
}

pub fn decay_slope(times: &[f64], peaks: &[f64]) -> f64 {
    let xs: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = peaks.iter().map(|p| p.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn peak_slope(res: &SolveResult, t0: f64, t1: f64) -> f64 {
    let (mut ts, mut ps) = (Vec::new(), Vec::new());
    for s in &res.steps {
        if s.time >= t0 - 1e-12 && s.time <= t1 + 1e-12 {
            ts.push(s.time);
            ps.push(res.u.slice(s.step).iter().fold(0.0f64, |m, v| m.max(*v)));
        }
    }
    decay_slope(&ts, &ps)
}
