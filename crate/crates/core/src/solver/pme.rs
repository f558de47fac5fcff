//! Backward-Euler finite volumes for `u_t - Δ(|u|^{m-1}u) + T_k(|u|^{q-1}u) = μ`
//! with zero Dirichlet data.
//!
//! Face fluxes are `(Φ_n(u_j) - Φ_n(u_i)) / d_ij`, with `Φ_n` the primitive of
//! the clipped diffusivity. The cell balance is then an M-function of the
//! cell values, so the discrete comparison principle holds exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linalg::{pcg, Csr};
use super::{
    absorption_from, check_ordered, default_mollification, discretize_data, march,
    ComparisonOutcome, NewtonControls, SolveResult, Stepper,
};
use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, GridField, GridSpec, Lattice, Layout};
use crate::measure::RadonMeasure;
use crate::nonlinearity::{Absorption, Diffusion};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmeConfig {
    pub m: f64,
    /// Absorption exponent; `0` disables the absorption term.
    pub q: f64,
    /// Truncation level of the absorption; `f64::INFINITY` for none.
    pub k: f64,
    /// Clip level `n` of the diffusivity.
    pub n_reg: f64,
    pub newton: NewtonControls,
    pub domain: BoxDomain,
    pub grid: GridSpec,
    /// Mollification scale for atoms; defaults to twice the cell width.
    pub mollification: Option<f64>,
}

impl PmeConfig {
    /// Defaults: no absorption, `n_reg = 1e4`, default Newton controls.
    pub fn new(m: f64, domain: BoxDomain, grid: GridSpec) -> Self {
        Self {
            m,
            q: 0.0,
            k: f64::INFINITY,
            n_reg: 1e4,
            newton: NewtonControls::default(),
            domain,
            grid,
            mollification: None,
        }
    }

    pub fn with_absorption(mut self, q: f64, k: f64) -> Self {
        self.q = q;
        self.k = k;
        self
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::new(self.domain.clone(), self.grid.clone())
    }

    pub fn mollification_scale(&self) -> Result<f64> {
        Ok(self
            .mollification
            .unwrap_or(default_mollification(&self.lattice()?)))
    }

    pub fn absorption(&self) -> Result<Option<Absorption>> {
        absorption_from(self.q, self.k)
    }

    pub fn validate(&self) -> Result<Lattice> {
        let lattice = self.lattice()?;
        let n = self.domain.dim() as f64;
        if !(self.m > 0.0 && self.m.is_finite()) || self.m <= (n - 2.0) / n {
            return Err(Error::Hypothesis(format!(
                "diffusion exponent needs m > max(0, (N-2)/N), got m = {} with N = {n}",
                self.m
            )));
        }
        if self.q != 0.0 && self.q <= self.m.max(1.0) {
            return Err(Error::Hypothesis(format!(
                "absorption exponent needs q > max(1, m), got q = {} with m = {}",
                self.q, self.m
            )));
        }
        self.absorption()?;
        if !(self.n_reg >= 1.0 && self.n_reg.is_finite()) {
            return Err(Error::Config(format!(
                "n_reg must be >= 1, got {}",
                self.n_reg
            )));
        }
        self.newton.validate()?;
        if lattice.dt() > lattice.h() {
            return Err(Error::Config(format!(
                "time step {} exceeds the cell width {}",
                lattice.dt(),
                lattice.h()
            )));
        }
        if let Some(s) = self.mollification {
            if !(s > 0.0) {
                return Err(Error::Config(format!(
                    "mollification scale must be positive, got {s}"
                )));
            }
        }
        Ok(lattice)
    }
}

/// Two-point flux transmissibilities of the cell-centred grid.
pub(crate) struct Transmissibility {
    /// Interior faces `(i, j, T)`.
    pub faces: Vec<(usize, usize, f64)>,
    /// Extra diagonal weight from boundary faces (half-cell distance to the wall).
    pub boundary: Vec<f64>,
}

impl Transmissibility {
    pub fn new(lattice: &Lattice) -> Self {
        let n = lattice.n_space();
        let vol = lattice.cell_volume();
        let mut faces = Vec::with_capacity(n * lattice.dim());
        let mut boundary = vec![0.0; n];
        for i in 0..n {
            for a in 0..lattice.dim() {
                let h = lattice.widths()[a];
                let t = vol / (h * h);
                match lattice.neighbor(i, a, true) {
                    Some(j) => faces.push((i, j, t)),
                    None => boundary[i] += 2.0 * t,
                }
                if lattice.neighbor(i, a, false).is_none() {
                    boundary[i] += 2.0 * t;
                }
            }
        }
        Self { faces, boundary }
    }

    /// `out = K v`, the Dirichlet graph Laplacian applied to `v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (o, (b, x)) in out.iter_mut().zip(self.boundary.iter().zip(v)) {
            *o = b * x;
        }
        for &(i, j, t) in &self.faces {
            let flux = t * (v[i] - v[j]);
            out[i] += flux;
            out[j] -= flux;
        }
    }

    pub fn matrix(&self, n: usize) -> Csr {
        let pairs = self
            .faces
            .iter()
            .flat_map(|&(i, j, _)| [(i, j), (j, i)])
            .collect();
        let mut k = Csr::pattern(n, pairs);
        for (i, b) in self.boundary.iter().enumerate() {
            let d = k.diag[i];
            k.vals[d] += b;
        }
        for &(i, j, t) in &self.faces {
            let (di, dj) = (k.diag[i], k.diag[j]);
            k.vals[di] += t;
            k.vals[dj] += t;
            let s = k.slot(i, j);
            k.vals[s] -= t;
            let s = k.slot(j, i);
            k.vals[s] -= t;
        }
        k
    }
}

struct PmeStepper {
    diffusion: Diffusion,
    absorption: Option<Absorption>,
    trans: Transmissibility,
    laplacian: Csr,
    system: Csr,
    vol: f64,
    dt: f64,
    newton: NewtonControls,
}

impl PmeStepper {
    fn new(cfg: &PmeConfig, lattice: &Lattice) -> Result<Self> {
        let trans = Transmissibility::new(lattice);
        let laplacian = trans.matrix(lattice.n_space());
        Ok(Self {
            diffusion: Diffusion::new(cfg.m, cfg.n_reg),
            absorption: cfg.absorption()?,
            system: laplacian.clone(),
            laplacian,
            trans,
            vol: lattice.cell_volume(),
            dt: lattice.dt(),
            newton: cfg.newton,
        })
    }

    fn residual(&self, u: &[f64], u_old: &[f64], f: &[f64], phi: &mut [f64], out: &mut [f64]) {
        for (p, &x) in phi.iter_mut().zip(u) {
            *p = self.diffusion.potential(x);
        }
        self.trans.apply(phi, out);
        let c = self.vol / self.dt;
        for i in 0..u.len() {
            let g = self.absorption.map_or(0.0, |g| g.value(u[i]));
            out[i] += c * (u[i] - u_old[i]) + self.vol * (g - f[i]);
        }
    }
}

/// Root of `s + dt·g(s) = r` for odd nondecreasing `g`: safeguarded Newton
/// inside the bracket between `0` and `r`.
fn local_root(g: &Absorption, dt: f64, r: f64) -> f64 {
    let (mut lo, mut hi) = if r >= 0.0 { (0.0, r) } else { (r, 0.0) };
    let mut s = r;
    for _ in 0..100 {
        let phi = s + dt * g.value(s) - r;
        if phi == 0.0 {
            return s;
        }
        if phi > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let slope = 1.0 + dt * g.derivative(s);
        let mut next = s - phi / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() <= 1e-15 * s.abs().max(f64::MIN_POSITIVE) {
            return next;
        }
        s = next;
    }
    s
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

impl Stepper for PmeStepper {
    fn step(
        &mut self,
        u_old: &[f64],
        f: &[f64],
        u: &mut [f64],
    ) -> std::result::Result<(usize, f64), String> {
        let n = u.len();
        let scale = self.dt / self.vol;
        let mut phi = vec![0.0; n];
        let mut res = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut trial_res = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut a = vec![0.0; n];
        self.residual(u, u_old, f, &mut phi, &mut res);
        // Stiff absorption makes the first Newton step from u_old overshoot
        // badly; balancing each cell without diffusion is a better start.
        if let Some(g) = self.absorption {
            for i in 0..n {
                trial[i] = local_root(&g, self.dt, u_old[i] + self.dt * f[i]);
            }
            self.residual(&trial, u_old, f, &mut phi, &mut trial_res);
            if norm2(&trial_res) < norm2(&res) {
                u.copy_from_slice(&trial);
                std::mem::swap(&mut res, &mut trial_res);
            }
        }
        let mut r_max = max_abs(&res) * scale;
        for iter in 0..self.newton.max_iter {
            if r_max <= self.newton.tol {
                return Ok((iter, r_max));
            }
            // With y = a·δ the Jacobian diag(c) + K·diag(a) becomes diag(c/a) + K,
            // which is symmetric positive definite.
            self.system.vals.copy_from_slice(&self.laplacian.vals);
            for i in 0..n {
                a[i] = self.diffusion.diffusivity(u[i]);
                if !(a[i] > 0.0) {
                    return Err(format!("non-positive diffusivity {} at cell {i}", a[i]));
                }
                let dg = self.absorption.map_or(0.0, |g| g.derivative(u[i]));
                let c = self.vol / self.dt + self.vol * dg;
                let d = self.system.diag[i];
                self.system.vals[d] += c / a[i];
                rhs[i] = -res[i];
            }
            let cg = pcg(&self.system, &rhs, &mut y, 1e-11, 20 * n + 100);
            if !cg.converged && cg.relative_residual > 1e-6 {
                return Err(format!(
                    "linear solve stalled at relative residual {:.3e}",
                    cg.relative_residual
                ));
            }
            let r_norm = norm2(&res);
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                for i in 0..n {
                    trial[i] = u[i] + lambda * y[i] / a[i];
                }
                self.residual(&trial, u_old, f, &mut phi, &mut trial_res);
                if norm2(&trial_res) <= (1.0 - 1e-4 * lambda) * r_norm {
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                return Err(format!("line search failed at residual {r_max:.3e}"));
            }
            u.copy_from_slice(&trial);
            std::mem::swap(&mut res, &mut trial_res);
            r_max = max_abs(&res) * scale;
        }
        if r_max <= self.newton.tol {
            return Ok((self.newton.max_iter, r_max));
        }
        Err(format!(
            "newton did not converge in {} iterations (residual {r_max:.3e})",
            self.newton.max_iter
        ))
    }
}

/// Runs the porous-medium solver with source `mu` (space-time) and initial
/// datum `sigma` (space).
pub fn solve_pme(cfg: &PmeConfig, mu: &RadonMeasure, sigma: &RadonMeasure) -> Result<SolveResult> {
    let lattice = cfg.validate()?;
    let scale = cfg.mollification_scale()?;
    let data = discretize_data(mu, sigma, scale, &lattice)?;
    let mut stepper = PmeStepper::new(cfg, &lattice)?;
    march(
        &lattice,
        data,
        cfg.absorption()?,
        scale,
        cfg.newton.tol,
        &mut stepper,
    )
}

/// Solves with two ordered data sets and reports the minimum of `u1 - u2`.
///
/// The tolerance is `10·newton_tol` plus the accumulated Newton residual
/// `time_steps·newton_tol`; the scheme itself is exactly monotone.
pub fn comparison_run(
    cfg: &PmeConfig,
    mu1: &RadonMeasure,
    mu2: &RadonMeasure,
    sigma1: &RadonMeasure,
    sigma2: &RadonMeasure,
) -> Result<ComparisonOutcome> {
    let lattice = cfg.validate()?;
    let scale = cfg.mollification_scale()?;
    check_data_order(mu1, mu2, sigma1, sigma2, scale, &lattice)?;
    let (r1, r2) = rayon::join(
        || solve_pme(cfg, mu1, sigma1),
        || solve_pme(cfg, mu2, sigma2),
    );
    let slack = lattice.time_steps() as f64 * cfg.newton.tol;
    comparison_outcome(&r1?, &r2?, cfg.newton.tol, slack)
}

pub(crate) fn check_data_order(
    mu1: &RadonMeasure,
    mu2: &RadonMeasure,
    sigma1: &RadonMeasure,
    sigma2: &RadonMeasure,
    scale: f64,
    lattice: &Lattice,
) -> Result<()> {
    let d1 = discretize_data(mu1, sigma1, scale, lattice)?;
    let d2 = discretize_data(mu2, sigma2, scale, lattice)?;
    check_ordered(&d1.initial, &d2.initial, "initial data")?;
    check_ordered(d1.source.values(), d2.source.values(), "source data")
}

pub(crate) fn comparison_outcome(
    r1: &SolveResult,
    r2: &SolveResult,
    newton_tol: f64,
    slack: f64,
) -> Result<ComparisonOutcome> {
    let gap: Vec<f64> =
        r1.u.values()
            .iter()
            .zip(r2.u.values())
            .map(|(a, b)| a - b)
            .collect();
    let min_gap = gap.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ComparisonOutcome {
        gap: GridField::from_values(r1.lattice().clone(), Layout::SpaceTime, gap)?,
        min_gap,
        min_u1: r1.u.min_value(),
        min_u2: r2.u.min_value(),
        tol_comp: 10.0 * newton_tol + slack,
        slack,
    })
}

/// Mass left at the probe time for one mollification scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionPoint {
    pub scale: f64,
    /// Time actually probed (end of the step containing the requested time).
    pub time: f64,
    pub mass: f64,
    pub initial_mass: f64,
}

/// Unit atom at `atom`, mollified at each of `scales` (decreasing, each at
/// least twice the cell width); returns the integral of `u` at `t_probe`.
///
/// Runs stop at the first step ending at or after `t_probe`.
pub fn mass_retention_experiment(
    cfg: &PmeConfig,
    atom: &[f64],
    scales: &[f64],
    t_probe: f64,
) -> Result<Vec<RetentionPoint>> {
    let lattice = cfg.validate()?;
    let horizon = cfg.domain.horizon();
    if !(t_probe > 0.0 && t_probe < horizon) {
        return Err(Error::Domain(format!(
            "probe time {t_probe} outside (0, {horizon})"
        )));
    }
    if scales.is_empty() || scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config(
            "mollification scales must be nonempty and decreasing".into(),
        ));
    }
    if let Some(s) = scales
        .iter()
        .find(|&&s| s < 2.0 * lattice.h() * (1.0 - 1e-12))
    {
        return Err(Error::Resolution(format!(
            "scale {s} below twice the cell width {}",
            lattice.h()
        )));
    }
    let steps = ((t_probe / lattice.dt()) - 1e-9).ceil().max(1.0) as usize;
    let mut short = cfg.clone();
    short.domain = BoxDomain::new(
        cfg.domain.lower().to_vec(),
        cfg.domain.upper().to_vec(),
        steps as f64 * lattice.dt(),
    )?;
    short.grid = GridSpec::new(cfg.grid.cells_per_axis.clone(), steps)?;
    let sigma = RadonMeasure::dirac(short.domain.clone(), atom, 1.0)?;
    let mu = RadonMeasure::zero_space_time(short.domain.clone());
    scales
        .par_iter()
        .map(|&scale| {
            let mut run = short.clone();
            run.mollification = Some(scale);
            let res = solve_pme(&run, &mu, &sigma)?;
            let last = res.steps.last().expect("at least one step");
            Ok(RetentionPoint {
                scale,
                time: last.time,
                mass: res.slice_field(last.step).integral(),
                initial_mass: res.initial.integral(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize, steps: usize, a: f64, t: f64) -> (BoxDomain, GridSpec) {
        (
            BoxDomain::cube(2, -a, a, t).unwrap(),
            GridSpec::uniform(2, n, steps).unwrap(),
        )
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let (d, g) = square(16, 5, 1.0, 0.05);
        let cfg = PmeConfig::new(2.0, d.clone(), g).with_absorption(3.0, f64::INFINITY);
        let res = solve_pme(
            &cfg,
            &RadonMeasure::zero_space_time(d.clone()),
            &RadonMeasure::zero_space(d),
        )
        .unwrap();
        assert!(res.u.values().iter().all(|&v| v == 0.0));
        assert!(res.steps.iter().all(|s| s.newton_iters == 0));
    }

    #[test]
    fn hypotheses_are_checked() {
        let (d, g) = square(8, 4, 1.0, 0.1);
        let bad_q = PmeConfig::new(2.0, d.clone(), g.clone()).with_absorption(1.5, 1.0);
        assert!(matches!(bad_q.validate(), Err(Error::Hypothesis(_))));
        let bad_m = PmeConfig::new(0.0, d.clone(), g.clone());
        assert!(matches!(bad_m.validate(), Err(Error::Hypothesis(_))));
        let (d3, _) = (BoxDomain::cube(3, 0.0, 1.0, 0.1).unwrap(), ());
        let g3 = GridSpec::uniform(3, 4, 4).unwrap();
        let fast = PmeConfig::new(0.3, d3, g3);
        assert!(matches!(fast.validate(), Err(Error::Hypothesis(_))));
        let (d, g) = square(8, 1, 1.0, 1.0);
        assert!(matches!(
            PmeConfig::new(2.0, d, g).validate(),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn laplacian_matrix_matches_apply() {
        let (d, g) = square(5, 1, 1.0, 0.1);
        let lat = Lattice::new(d, g).unwrap();
        let t = Transmissibility::new(&lat);
        let k = t.matrix(lat.n_space());
        let v: Vec<f64> = (0..lat.n_space()).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut a = vec![0.0; v.len()];
        let mut b = vec![0.0; v.len()];
        t.apply(&v, &mut a);
        k.mul(&v, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mass_decreases_without_source() {
        let (d, g) = square(24, 20, 1.0, 0.02);
        let cfg = PmeConfig::new(2.0, d.clone(), g).with_absorption(2.5, f64::INFINITY);
        let sigma = RadonMeasure::dirac(d.clone(), &[0.0, 0.0], 1.0).unwrap();
        let res = solve_pme(&cfg, &RadonMeasure::zero_space_time(d), &sigma).unwrap();
        let mass = res.mass_history();
        assert!(mass.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(res.max_mass() <= 1.0 + 1e-9);
        assert!(res.absorption_integral() <= 1.0);
        assert!(res.u.min_value() >= -10.0 * cfg.newton.tol);
    }

    #[test]
    fn retention_rejects_bad_inputs() {
        let (d, g) = square(16, 10, 1.0, 0.01);
        let cfg = PmeConfig::new(2.0, d, g);
        assert!(matches!(
            mass_retention_experiment(&cfg, &[0.0, 0.0], &[0.4, 0.3], 0.02),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            mass_retention_experiment(&cfg, &[0.0, 0.0], &[0.4, 0.05], 0.005),
            Err(Error::Resolution(_))
        ));
        assert!(mass_retention_experiment(&cfg, &[0.0, 0.0], &[0.2, 0.4], 0.005).is_err());
    }

    #[test]
    fn local_root_balances_absorption() {
        for (q, k, dt, r) in [
            (5.0, f64::INFINITY, 1e-3, 30.0),
            (2.0, 4.0, 0.5, 10.0),
            (0.5, f64::INFINITY, 0.1, -3.0),
            (3.0, 1.0, 1.0, 0.0),
        ] {
            let g = Absorption { q, k };
            let s = local_root(&g, dt, r);
            assert!(
                (s + dt * g.value(s) - r).abs() <= 1e-12 * r.abs().max(1.0),
                "{q} {k} {r} {s}"
            );
            assert!(s.abs() <= r.abs() && s * r >= 0.0);
        }
    }
}
