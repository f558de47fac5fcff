//! The standard porous-medium scenario sweep: three diffusion exponents,
//! three absorption regimes and two dimensions, with a unit atom as initial
//! datum and a smooth space-time source.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimates::{verify_estimates, Equation, EstimateReport, VerifyOptions};
use crate::geometry::{BoxDomain, GridField, GridSpec, Lattice};
use crate::measure::RadonMeasure;
use crate::solver::{solve_pme, PmeConfig, SolveResult};

pub const SWEEP_EXPONENTS: [f64; 3] = [0.8, 1.0, 2.0];
pub const SWEEP_DIMS: [usize; 2] = [1, 2];
const DATA_SLABS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbsorptionRegime {
    Disabled,
    /// Midway between `max(1, m)` and `m + 2/N`.
    Subcritical,
    /// `m + 2/N + 1`.
    Supercritical,
}

impl AbsorptionRegime {
    pub const ALL: [AbsorptionRegime; 3] = [
        AbsorptionRegime::Disabled,
        AbsorptionRegime::Subcritical,
        AbsorptionRegime::Supercritical,
    ];

    /// Absorption exponent, `0` when disabled.
    pub fn exponent(self, m: f64, dim: usize) -> f64 {
        let critical = m + 2.0 / dim as f64;
        match self {
            AbsorptionRegime::Disabled => 0.0,
            AbsorptionRegime::Subcritical => 0.5 * (m.max(1.0) + critical),
            AbsorptionRegime::Supercritical => critical + 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AbsorptionRegime::Disabled => "disabled",
            AbsorptionRegime::Subcritical => "subcritical",
            AbsorptionRegime::Supercritical => "supercritical",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCase {
    pub m: f64,
    pub regime: AbsorptionRegime,
    pub dim: usize,
}

impl SweepCase {
    pub fn q(&self) -> f64 {
        self.regime.exponent(self.m, self.dim)
    }

    pub fn label(&self) -> String {
        format!("m{}-{}-n{}", self.m, self.regime.name(), self.dim)
    }
}

pub fn standard_sweep() -> Vec<SweepCase> {
    let mut cases = Vec::new();
    for &dim in &SWEEP_DIMS {
        for &m in &SWEEP_EXPONENTS {
            for regime in AbsorptionRegime::ALL {
                cases.push(SweepCase { m, regime, dim });
            }
        }
    }
    cases
}

/// Grid and data of the sweep. `refine` divides the cell width and time
/// step; the mollification scale is `mollification_cells` unrefined cell
/// widths so refined runs approximate the same problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub cells_1d: usize,
    pub cells_2d: usize,
    pub steps: usize,
    pub horizon: f64,
    pub refine: usize,
    pub mollification_cells: f64,
    pub initial_mass: f64,
    pub source_mass: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            cells_1d: 128,
            cells_2d: 48,
            steps: 40,
            horizon: 0.1,
            refine: 1,
            mollification_cells: 4.0,
            initial_mass: 1.0,
            source_mass: 0.5,
        }
    }
}

impl SweepSettings {
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            refine: self.refine * factor,
            ..self.clone()
        }
    }

    fn base_cells(&self, dim: usize) -> usize {
        if dim == 1 {
            self.cells_1d
        } else {
            self.cells_2d
        }
    }

    pub fn domain(&self, dim: usize) -> Result<BoxDomain> {
        BoxDomain::cube(dim, -1.0, 1.0, self.horizon)
    }

    pub fn lattice(&self, dim: usize) -> Result<Lattice> {
        Lattice::new(
            self.domain(dim)?,
            GridSpec::uniform(
                dim,
                self.base_cells(dim) * self.refine,
                self.steps * self.refine,
            )?,
        )
    }

    pub fn mollification(&self, dim: usize) -> f64 {
        self.mollification_cells * 2.0 / self.base_cells(dim) as f64
    }

    pub fn config(&self, case: &SweepCase) -> Result<PmeConfig> {
        let lattice = self.lattice(case.dim)?;
        let mut cfg = PmeConfig::new(case.m, lattice.domain().clone(), lattice.grid().clone())
            .with_absorption(case.q(), f64::INFINITY);
        cfg.mollification = Some(self.mollification(case.dim));
        Ok(cfg)
    }

    /// `(μ, σ)`: a Gaussian source centred off the origin, constant in time,
    /// and an atom at the origin. The source lives on a coarse data lattice
    /// that does not depend on `refine`.
    pub fn data(&self, dim: usize) -> Result<(RadonMeasure, RadonMeasure)> {
        let domain = self.domain(dim)?;
        let lattice = Lattice::new(
            domain.clone(),
            GridSpec::uniform(dim, (self.base_cells(dim) / 2).max(2), DATA_SLABS)?,
        )?;
        let width = 0.15;
        let bump = GridField::from_fn_space_time(lattice, |x, _| {
            let r2 = (x[0] - 0.4).powi(2) + x[1..].iter().map(|v| v * v).sum::<f64>();
            (-r2 / (2.0 * width * width)).exp()
        });
        let total = bump.integral();
        let mu = RadonMeasure::zero_space_time(domain.clone())
            .with_density(bump.scaled(self.source_mass / total))?;
        let sigma = RadonMeasure::dirac(domain, &vec![0.0; dim], self.initial_mass)?;
        Ok((mu, sigma))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case: SweepCase,
    pub q: f64,
    pub h: f64,
    pub dt: f64,
    pub data_mass: f64,
    pub max_mass: f64,
    pub absorption_integral: f64,
    pub newton_iters: usize,
    pub solve_seconds: f64,
    pub reports: Vec<EstimateReport>,
}

impl CaseOutcome {
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }
}

/// Solves and verifies one case; the solution itself is dropped.
pub fn run_case(
    case: &SweepCase,
    settings: &SweepSettings,
    opts: &VerifyOptions,
) -> Result<CaseOutcome> {
    run_case_keep(case, settings, opts).map(|(o, _)| o)
}

pub fn run_case_keep(
    case: &SweepCase,
    settings: &SweepSettings,
    opts: &VerifyOptions,
) -> Result<(CaseOutcome, SolveResult)> {
    let cfg = settings.config(case)?;
    let (mu, sigma) = settings.data(case.dim)?;
    let start = Instant::now();
    let result = solve_pme(&cfg, &mu, &sigma)?;
    let solve_seconds = start.elapsed().as_secs_f64();
    let reports = verify_estimates(&result, &mu, &sigma, Equation::Pme { m: case.m }, opts)?;
    let lat = result.lattice();
    let outcome = CaseOutcome {
        case: *case,
        q: case.q(),
        h: lat.h(),
        dt: lat.dt(),
        data_mass: mu.total_variation() + sigma.total_variation(),
        max_mass: result.max_mass(),
        absorption_integral: result.absorption_integral(),
        newton_iters: result.total_newton_iters(),
        solve_seconds,
        reports,
    };
    Ok((outcome, result))
}

/// Runs the cases in parallel; output order matches the input.
pub fn run_sweep(
    cases: &[SweepCase],
    settings: &SweepSettings,
    opts: &VerifyOptions,
) -> Vec<Result<CaseOutcome>> {
    cases
        .par_iter()
        .map(|c| run_case(c, settings, opts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_exponents_respect_hypotheses() {
        let cases = standard_sweep();
        assert_eq!(cases.len(), 18);
        for c in &cases {
            let q = c.q();
            let crit = c.m + 2.0 / c.dim as f64;
            match c.regime {
                AbsorptionRegime::Disabled => assert_eq!(q, 0.0),
                AbsorptionRegime::Subcritical => assert!(q > c.m.max(1.0) && q < crit),
                AbsorptionRegime::Supercritical => assert!(q > crit),
            }
        }
        let c = SweepCase {
            m: 2.0,
            regime: AbsorptionRegime::Subcritical,
            dim: 2,
        };
        assert_eq!(c.q(), 2.5);
    }

    #[test]
    fn data_masses() {
        let s = SweepSettings::default();
        for dim in [1, 2] {
            let (mu, sigma) = s.data(dim).unwrap();
            assert!((mu.total_variation() - 0.5).abs() < 1e-12);
            assert_eq!(sigma.total_variation(), 1.0);
            assert!(s.mollification(dim) >= 2.0 * s.refined(2).lattice(dim).unwrap().h());
        }
    }
}
