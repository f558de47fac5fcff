//! The dyadic potential `P_p^ρ[μ] = Σ_i D_p(ρ_i)` with `ρ_i = 2^{-i} ρ`, where
//! `D_p(ρ) = inf_τ (p−2)τ^{-1/(p−2)} + |μ|(Q_{ρ,τρ^p})/(2(p−1)^{p−1} ρ^N)`.

use crate::error::{Error, Result};
use crate::geometry::dist;
use crate::measure::{Ambient, OverlapRule, RadonMeasure};

use super::riesz::Events;
use super::PotentialValue;

/// Partial sums above this are reported as infinite.
const OVERFLOW: f64 = 1e300;

#[derive(Clone, Debug, PartialEq)]
pub struct DyadicSchedule {
    base_radius: f64,
    i_max: usize,
    tau_grid: Vec<f64>,
}

impl DyadicSchedule {
    pub fn new(base_radius: f64, i_max: usize, tau_grid: Vec<f64>) -> Result<Self> {
        if !(base_radius > 0.0 && base_radius.is_finite()) {
            return Err(Error::Domain(format!(
                "base radius must be positive, got {base_radius}"
            )));
        }
        if tau_grid.is_empty() {
            return Err(Error::Config("τ grid is empty".into()));
        }
        if tau_grid[0] <= 0.0 || tau_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "τ grid must be positive and strictly increasing".into(),
            ));
        }
        Ok(Self {
            base_radius,
            i_max,
            tau_grid,
        })
    }

    /// 64 log-spaced values on `[1e-6, 1e8]`.
    pub fn default_taus() -> Vec<f64> {
        log_grid(1e-6, 1e8, 64)
    }

    pub fn with_default_taus(base_radius: f64, i_max: usize) -> Result<Self> {
        Self::new(base_radius, i_max, Self::default_taus())
    }

    /// Deepest level with `ρ_i ≥ h`.
    pub fn resolved(base_radius: f64, h: f64, tau_grid: Vec<f64>) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Domain("cell width must be positive".into()));
        }
        let i_max = if base_radius >= h {
            (base_radius / h).log2().floor() as usize
        } else {
            0
        };
        Self::new(base_radius, i_max, tau_grid)
    }

    pub fn base_radius(&self) -> f64 {
        self.base_radius
    }

    pub fn i_max(&self) -> usize {
        self.i_max
    }

    pub fn tau_grid(&self) -> &[f64] {
        &self.tau_grid
    }

    pub fn radius(&self, i: usize) -> f64 {
        self.base_radius * 0.5f64.powi(i as i32)
    }
}

pub(crate) fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|k| lo * (step * k as f64).exp()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpTerm {
    /// Minimum of the objective over the τ grid.
    pub value: f64,
    /// Minimizing grid node.
    pub tau: f64,
    /// `value` minus a certified lower bound for the infimum over all `τ > 0`.
    pub modulus: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PPotential {
    pub value: PotentialValue,
    pub partial_sum: f64,
    /// Number of dyadic levels summed (`i_max + 1`).
    pub levels: usize,
    /// Set when `ρ_{i_max}` drops below the measure's cell width.
    pub below_resolution: bool,
    pub terms: Vec<DpTerm>,
}

/// Masses near `(x, t)` keyed by spatial distance and time offset.
struct LocalMasses {
    /// `(spatial distance, |time offset|, mass)` sorted by distance.
    items: Vec<(f64, f64, f64)>,
}

impl LocalMasses {
    fn gather(mu: &RadonMeasure, x: &[f64], t: f64, radius: f64) -> Self {
        let n = mu.domain().dim();
        let mut items = Vec::new();
        for a in mu.atoms() {
            let r = dist(&a.position, x);
            if r < radius {
                items.push((r, (a.time - t).abs(), a.mass.abs()));
            }
        }
        if let Some(f) = mu.density() {
            let l = f.lattice();
            let ns = l.n_space();
            let cm = f.cell_measure();
            l.for_each_in_range(&l.cell_range(x, radius), |idx, c| {
                let r = dist(&c[..n], x);
                if r < radius {
                    for j in 0..l.time_steps() {
                        let v = f.values()[j * ns + idx];
                        if v != 0.0 {
                            items.push((r, (l.time_center(j) - t).abs(), v.abs() * cm));
                        }
                    }
                }
            });
        }
        if let Some(sigma) = mu.initial() {
            for a in sigma.atoms() {
                let r = dist(&a.position, x);
                if r < radius {
                    items.push((r, t, a.mass.abs()));
                }
            }
            if let Some(f) = sigma.density() {
                let l = f.lattice();
                let cm = f.cell_measure();
                l.for_each_in_range(&l.cell_range(x, radius), |idx, c| {
                    let r = dist(&c[..n], x);
                    let v = f.values()[idx];
                    if r < radius && v != 0.0 {
                        items.push((r, t, v.abs() * cm));
                    }
                });
            }
        }
        items.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { items }
    }

    /// Time-offset events for the ball of radius `rho`.
    fn events(&self, rho: f64) -> Events {
        let k = self.items.partition_point(|e| e.0 < rho);
        Events::new(self.items[..k].iter().map(|e| (e.1, e.2)).collect())
    }
}

fn check(mu: &RadonMeasure, p: f64, rho: f64) -> Result<()> {
    if mu.ambient() != Ambient::SpaceTime {
        return Err(Error::Config("D_p needs a space-time measure".into()));
    }
    if !(p > 2.0 && p.is_finite()) {
        return Err(Error::Hypothesis(format!("D_p needs p > 2, got {p}")));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Domain(format!("radius must be positive, got {rho}")));
    }
    Ok(())
}

fn minimize(
    mu: &RadonMeasure,
    local: &LocalMasses,
    x: &[f64],
    t: f64,
    rho: f64,
    p: f64,
    taus: &[f64],
) -> Result<DpTerm> {
    if taus.is_empty() {
        return Err(Error::Config("τ grid is empty".into()));
    }
    let n = mu.domain().dim() as f64;
    let horizon = mu.domain().horizon();
    let events = local.events(rho);
    let scale = 1.0 / (2.0 * (p - 1.0).powf(p - 1.0) * rho.powf(n));
    let rho_p = rho.powf(p);
    let decreasing = |tau: f64| (p - 2.0) * tau.powf(-1.0 / (p - 2.0));
    let mass = |half: f64| {
        let mut m = events.below(half);
        for part in mu.products() {
            let time = part.profile_integral(t - half, t + half, horizon);
            if time > 0.0 {
                m += time
                    * part
                        .omega
                        .measure_of_ball(x, rho, OverlapRule::CellCenter)
                        .unwrap_or(0.0);
            }
        }
        scale * m
    };
    let inc: Vec<f64> = taus.iter().map(|&tau| mass(tau * rho_p)).collect();
    let dec: Vec<f64> = taus.iter().map(|&tau| decreasing(tau)).collect();
    let (best, value) = dec.iter().zip(&inc).map(|(a, b)| a + b).enumerate().fold(
        (0, f64::INFINITY),
        |acc, (k, v)| if v < acc.1 { (k, v) } else { acc },
    );
    // Lower envelope: on each grid interval the decreasing part is at least its
    // right value and the nondecreasing part at least its left value.
    let mut lower = dec[0] + mass(f64::MIN_POSITIVE);
    for k in 0..taus.len() - 1 {
        lower = lower.min(dec[k + 1] + inc[k]);
    }
    lower = lower.min(*inc.last().unwrap());
    Ok(DpTerm {
        value,
        tau: taus[best],
        modulus: (value - lower).max(0.0),
    })
}

/// One term `D_p(ρ)(x,t)` minimized over the schedule's τ grid.
pub fn dp_term(
    mu: &RadonMeasure,
    x: &[f64],
    t: f64,
    rho: f64,
    p: f64,
    schedule: &DyadicSchedule,
) -> Result<DpTerm> {
    check(mu, p, rho)?;
    let local = LocalMasses::gather(mu, x, t, rho);
    minimize(mu, &local, x, t, rho, p, schedule.tau_grid())
}

/// `Σ_{i=0}^{i_max} D_p(ρ_i)`; reported infinite at atoms, where the full series diverges.
pub fn p_potential(
    mu: &RadonMeasure,
    x: &[f64],
    t: f64,
    p: f64,
    schedule: &DyadicSchedule,
) -> Result<PPotential> {
    check(mu, p, schedule.base_radius())?;
    let local = LocalMasses::gather(mu, x, t, schedule.base_radius());
    let terms = (0..=schedule.i_max())
        .map(|i| minimize(mu, &local, x, t, schedule.radius(i), p, schedule.tau_grid()))
        .collect::<Result<Vec<_>>>()?;
    let partial_sum: f64 = terms.iter().map(|d| d.value).sum();
    let at_atom = mu
        .atoms()
        .iter()
        .any(|a| a.mass != 0.0 && a.time == t && dist(&a.position, x) == 0.0)
        || (t == 0.0
            && mu.initial().is_some_and(|s| {
                s.atoms()
                    .iter()
                    .any(|a| a.mass != 0.0 && dist(&a.position, x) == 0.0)
            }));
    let value = if at_atom || !(partial_sum < OVERFLOW) {
        PotentialValue::Infinite
    } else {
        PotentialValue::Finite(partial_sum)
    };
    let below_resolution = mu
        .resolution()
        .is_some_and(|h| schedule.radius(schedule.i_max()) < h);
    Ok(PPotential {
        value,
        partial_sum,
        levels: terms.len(),
        below_resolution,
        terms,
    })
}
