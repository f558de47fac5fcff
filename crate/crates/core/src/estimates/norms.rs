use crate::error::{Error, Result};
use crate::geometry::GridField;

/// `sup_λ λ·|{|f| > λ}|^{1/r}` for a piecewise-constant field with cells of
/// equal measure.
///
/// Below each attained level `v` the superlevel set is every cell with
/// `|f| ≥ v`, and the product increases towards `v`, so the supremum is the
/// largest of `v·(count(|f| ≥ v)·cell)^{1/r}` over attained levels.
pub fn weak_norm_of(values: &[f64], cell_measure: f64, r: f64) -> f64 {
    let mut mags: Vec<f64> = values
        .iter()
        .map(|v| v.abs())
        .filter(|&v| v > 0.0)
        .collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut best = 0.0f64;
    let mut k = 0;
    while k < mags.len() {
        let level = mags[k];
        while k < mags.len() && mags[k] == level {
            k += 1;
        }
        best = best.max(level * (k as f64 * cell_measure).powf(1.0 / r));
    }
    best
}

pub fn marcinkiewicz_norm(f: &GridField, r: f64) -> Result<f64> {
    check_order(r)?;
    Ok(weak_norm_of(f.values(), f.cell_measure(), r))
}

pub fn lebesgue_norm(f: &GridField, r: f64) -> Result<f64> {
    check_order(r)?;
    let sum: f64 = f.values().iter().map(|v| v.abs().powf(r)).sum();
    Ok((sum * f.cell_measure()).powf(1.0 / r))
}

fn check_order(r: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!(
            "norm order must be positive, got {r}"
        )));
    }
    Ok(())
}

/// Largest spatial L1 norm over the time slices; the L1 norm for a spatial field.
pub fn linf_l1_norm(u: &GridField) -> f64 {
    let vol = u.lattice().cell_volume();
    (0..u.n_slices())
        .map(|j| u.slice(j).iter().map(|v| v.abs()).sum::<f64>() * vol)
        .fold(0.0, f64::max)
}

/// `|∇(|u|^{m-1}u)|` per cell by forward differences, with zero beyond the
/// last cell of each axis.
pub fn composite_gradient(u: &GridField, m: f64) -> GridField {
    let lat = u.lattice().clone();
    let ns = lat.n_space();
    let w: Vec<f64> = u
        .values()
        .iter()
        .map(|&v| v.abs().powf(m) * v.signum())
        .collect();
    let mut out = vec![0.0; w.len()];
    for j in 0..u.n_slices() {
        let base = j * ns;
        for i in 0..ns {
            let mut sq = 0.0;
            for axis in 0..lat.dim() {
                let next = lat.neighbor(i, axis, true).map_or(0.0, |k| w[base + k]);
                let g = (next - w[base + i]) / lat.widths()[axis];
                sq += g * g;
            }
            out[base + i] = sq.sqrt();
        }
    }
    GridField::from_values(lat, u.layout(), out).expect("same shape as the input")
}
