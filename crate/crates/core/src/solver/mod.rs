//! Implicit time stepping for the porous-medium and p-Laplace problems with
//! measure data.

pub(crate) mod linalg;
pub mod plap;
pub mod pme;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridField, Lattice, Layout};
use crate::measure::{Ambient, RadonMeasure};
use crate::nonlinearity::Absorption;

pub use plap::{plap_comparison_run, solve_plap, PLapConfig};
pub use pme::{comparison_run, mass_retention_experiment, solve_pme, PmeConfig, RetentionPoint};

/// Newton stopping rule shared by both solvers.
///
/// The residual is measured in units of the solution: the cell balance
/// divided by `cell volume / dt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonControls {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonControls {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 60,
        }
    }
}

impl NewtonControls {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) || self.max_iter == 0 {
            return Err(Error::Config(format!(
                "newton controls need tol > 0 and max_iter >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Diagnostics recorded after each time step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    /// L1 norm of the solution at the end of the step.
    pub mass: f64,
    pub newton_iters: usize,
    pub residual: f64,
    /// Running value of the integral of |absorption term| up to this time.
    pub absorption_integral: f64,
}

/// Output of a converged run.
#[derive(Clone, Debug)]
pub struct SolveResult {
    /// Space-time field; slice `j` is the solution at the end of step `j`.
    pub u: GridField,
    /// Discretized initial datum.
    pub initial: GridField,
    /// Discretized source, per unit time.
    pub source: GridField,
    pub steps: Vec<StepRecord>,
    pub mollification_scale: f64,
    pub newton_tol: f64,
}

impl SolveResult {
    pub fn lattice(&self) -> &Lattice {
        self.u.lattice()
    }

    pub fn mass_history(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.mass).collect()
    }

    /// Largest L1 norm over the initial datum and all time slices.
    pub fn max_mass(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.mass)
            .fold(self.initial.l1_norm(), f64::max)
    }

    pub fn absorption_integral(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.absorption_integral)
    }

    pub fn total_newton_iters(&self) -> usize {
        self.steps.iter().map(|s| s.newton_iters).sum()
    }

    /// Solution at the end of step `j`, as a spatial field.
    pub fn slice_field(&self, step: usize) -> GridField {
        let lat = self.u.lattice().clone();
        GridField::from_values(lat, Layout::Space, self.u.slice(step).to_vec())
            .expect("slice length matches the lattice")
    }

    /// Slice whose end time is closest to `t`.
    pub fn step_at(&self, t: f64) -> usize {
        let lat = self.u.lattice();
        let j = (t / lat.dt()).round() as isize - 1;
        j.clamp(0, lat.time_steps() as isize - 1) as usize
    }
}

/// Result of a paired run with ordered data.
#[derive(Clone, Debug)]
pub struct ComparisonOutcome {
    /// `u1 - u2` on the space-time lattice.
    pub gap: GridField,
    pub min_gap: f64,
    pub min_u1: f64,
    pub min_u2: f64,
    /// `10 * newton_tol` plus the slack below.
    pub tol_comp: f64,
    /// Accumulated Newton residual (and, for p-Laplace, discretization) slack.
    pub slack: f64,
}

impl ComparisonOutcome {
    pub fn passed(&self) -> bool {
        self.min_gap >= -self.tol_comp
    }
}

/// Default mollification scale: twice the largest cell width.
pub fn default_mollification(lattice: &Lattice) -> f64 {
    2.0 * lattice.h()
}

pub(crate) struct Discretized {
    pub initial: Vec<f64>,
    pub source: GridField,
}

/// Turns `(mu, sigma)` into an initial vector and a per-unit-time source.
pub(crate) fn discretize_data(
    mu: &RadonMeasure,
    sigma: &RadonMeasure,
    scale: f64,
    lattice: &Lattice,
) -> Result<Discretized> {
    if mu.ambient() != Ambient::SpaceTime {
        return Err(Error::Config(
            "source measure must live in space-time".into(),
        ));
    }
    if sigma.ambient() != Ambient::Space {
        return Err(Error::Config("initial measure must live in space".into()));
    }
    let needs_mollifier = !mu.atoms().is_empty()
        || !sigma.atoms().is_empty()
        || mu.initial().is_some_and(|s| !s.atoms().is_empty());
    if needs_mollifier && scale < 2.0 * lattice.h() * (1.0 - 1e-12) {
        return Err(Error::Resolution(format!(
            "mollification scale {scale} is below twice the cell width {}",
            lattice.h()
        )));
    }
    let mut initial = sigma.discretize_initial(scale, lattice)?.into_values();
    if let Some(extra) = mu.initial() {
        let extra = extra.discretize_initial(scale, lattice)?;
        for (u, e) in initial.iter_mut().zip(extra.values()) {
            *u += e;
        }
    }
    let source = mu.discretize_source(scale, lattice)?;
    Ok(Discretized { initial, source })
}

/// One implicit step: given the previous state and this step's source
/// density, overwrite `u` (initialized with the previous state).
pub(crate) trait Stepper {
    fn step(
        &mut self,
        u_old: &[f64],
        f: &[f64],
        u: &mut [f64],
    ) -> std::result::Result<(usize, f64), String>;
}

pub(crate) fn march(
    lattice: &Lattice,
    data: Discretized,
    absorption: Option<Absorption>,
    scale: f64,
    newton_tol: f64,
    stepper: &mut dyn Stepper,
) -> Result<SolveResult> {
    let n = lattice.n_space();
    let steps = lattice.time_steps();
    let dt = lattice.dt();
    let vol = lattice.cell_volume();
    let mut out = Vec::with_capacity(n * steps);
    let mut records = Vec::with_capacity(steps);
    let mut u_old = data.initial.clone();
    let mut u = data.initial.clone();
    let mut absorbed = 0.0;
    for j in 0..steps {
        let f = data.source.slice(j);
        let (iters, residual) = stepper
            .step(&u_old, f, &mut u)
            .map_err(|reason| Error::Solver { step: j, reason })?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver {
                step: j,
                reason: "non-finite cell value".into(),
            });
        }
        if let Some(g) = absorption {
            absorbed += dt * vol * u.iter().map(|&v| g.value(v).abs()).sum::<f64>();
        }
        records.push(StepRecord {
            step: j,
            time: lattice.time_end(j),
            mass: vol * u.iter().map(|v| v.abs()).sum::<f64>(),
            newton_iters: iters,
            residual,
            absorption_integral: absorbed,
        });
        out.extend_from_slice(&u);
        u_old.copy_from_slice(&u);
    }
    Ok(SolveResult {
        u: GridField::from_values(lattice.clone(), Layout::SpaceTime, out)?,
        initial: GridField::from_values(lattice.clone(), Layout::Space, data.initial)?,
        source: data.source,
        steps: records,
        mollification_scale: scale,
        newton_tol,
    })
}

/// Checks `a >= b` cell-wise.
pub(crate) fn check_ordered(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if let Some(i) = a.iter().zip(b).position(|(x, y)| x < y) {
        return Err(Error::Precondition(format!(
            "{what} not ordered after discretization at cell {i}: {} < {}",
            a[i], b[i]
        )));
    }
    Ok(())
}

pub(crate) fn absorption_from(q: f64, k: f64) -> Result<Option<Absorption>> {
    if q == 0.0 {
        return Ok(None);
    }
    if !(q > 0.0 && q.is_finite()) || !(k > 0.0) {
        return Err(Error::Config(format!(
            "absorption needs q > 0 and k > 0, got q = {q}, k = {k}"
        )));
    }
    Ok(Some(Absorption { q, k }))
}
