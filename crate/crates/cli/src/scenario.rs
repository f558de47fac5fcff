//! Scenario documents: one TOML file describing a solve, its probes,
//! requested outputs and verification ceilings.
//!
//! ```toml
//! name = "barenblatt"
//! equation = "pme"          # or "plap"
//! domain = { lower = [-1.5, -1.5], upper = [1.5, 1.5], horizon = 0.1 }
//! grid = { cells_per_axis = [48, 48], time_steps = 100 }
//!
//! [solver]
//! m = 2.0                   # p = ... for plap
//! mollification = 0.125
//!
//! [initial]
//! atoms = [{ x = [0.0, 0.0], mass = 1.0 }]
//!
//! [outputs]
//! decay_fit = { from = 0.01, to = 0.1, expect = -0.5 }
//! ```
//!
//! Parsing resolves every default into the document, so the echoed
//! `scenario.toml` of a run is complete and reparses to the same value.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dplab_core::estimates::{Ceilings, Equation, VerifyOptions};
use dplab_core::measure_file::MeasureDescription;
use dplab_core::solver::default_mollification;
use dplab_core::{
    Ambient, BoxDomain, GridSpec, Lattice, NewtonControls, PLapConfig, PmeConfig, RadonMeasure,
};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquationKind {
    Pme,
    Plap,
}

impl EquationKind {
    pub fn name(self) -> &'static str {
        match self {
            EquationKind::Pme => "pme",
            EquationKind::Plap => "plap",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub equation: EquationKind,
    /// Recorded in the manifest; probe selection itself is deterministic.
    #[serde(default)]
    pub seed: u64,
    pub domain: BoxDomain,
    pub grid: GridSpec,
    pub solver: SolverSection,
    #[serde(default)]
    pub initial: MeasureDescription,
    #[serde(default)]
    pub source: MeasureDescription,
    #[serde(default)]
    pub probes: ProbeSection,
    #[serde(default)]
    pub outputs: OutputSection,
    #[serde(default)]
    pub ceilings: Ceilings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// `0` disables absorption.
    #[serde(default)]
    pub q: f64,
    #[serde(default = "infinite")]
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_reg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mollification: Option<f64>,
    #[serde(default = "default_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_max_iter")]
    pub newton_max_iter: usize,
}

fn infinite() -> f64 {
    f64::INFINITY
}

fn default_tol() -> f64 {
    NewtonControls::default().tol
}

fn default_max_iter() -> usize {
    NewtonControls::default().max_iter
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub count: usize,
    pub times: usize,
    pub quadrature_nodes: usize,
    /// Truncation radius of the potential written to `potential.csv`;
    /// defaults to twice `diam(Ω) + T^{1/2}` (`T^{1/p}` for p-Laplace).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential_radius: Option<f64>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let v = VerifyOptions::default();
        Self {
            count: v.probes,
            times: v.probe_times,
            quadrature_nodes: v.quadrature_nodes,
            potential_radius: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub potentials: bool,
    pub verify: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_fit: Option<DecayFit>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            potentials: true,
            verify: true,
            decay_fit: None,
        }
    }
}

/// Log-log fit of `max_x |u(·, t)|` over `from ≤ t ≤ to`, passing when the
/// slope is within `tolerance · |expect|` of `expect`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayFit {
    pub from: f64,
    pub to: f64,
    pub expect: f64,
    #[serde(default = "default_fit_tolerance")]
    pub tolerance: f64,
}

fn default_fit_tolerance() -> f64 {
    0.1
}

/// Parses and resolves a scenario document; relative paths are taken
/// against the directory of `origin`.
pub fn parse_scenario(text: &str, origin: &Path) -> CliResult<Scenario> {
    Scenario::from_toml(text, origin)?.resolve()
}

pub fn read_scenario(path: &Path) -> CliResult<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_scenario(&text, path)
}

impl Scenario {
    /// Parses without validation or defaults; paths become absolute.
    pub fn from_toml(text: &str, origin: &Path) -> CliResult<Self> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| CliError::parse(origin, &e))?;
        let base = base_dir(origin);
        absolutize(&mut s.initial, &base);
        absolutize(&mut s.source, &base);
        Ok(s)
    }

    pub fn emit(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Checks files and hypotheses and writes every default into the document.
    pub fn resolve(mut self) -> CliResult<Self> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::Config(format!(
                "scenario name {:?} is not a valid directory name",
                self.name
            )));
        }
        for desc in [&self.initial, &self.source] {
            desc.referenced_files(Path::new("/"))?
                .into_iter()
                .try_for_each(|p| fs::metadata(&p).map(|_| ()).map_err(|e| CliError::io(p, e)))?;
        }
        let s = &mut self.solver;
        match self.equation {
            EquationKind::Pme => {
                if s.m.is_none() {
                    return Err(CliError::Config("a pme scenario needs solver.m".into()));
                }
                if s.p.is_some() || s.eps.is_some() {
                    return Err(CliError::Config(
                        "solver.p and solver.eps belong to plap scenarios".into(),
                    ));
                }
                s.n_reg.get_or_insert(1e4);
            }
            EquationKind::Plap => {
                if s.p.is_none() {
                    return Err(CliError::Config("a plap scenario needs solver.p".into()));
                }
                if s.m.is_some() || s.n_reg.is_some() {
                    return Err(CliError::Config(
                        "solver.m and solver.n_reg belong to pme scenarios".into(),
                    ));
                }
            }
        }
        let lattice = Lattice::new(self.domain.clone(), self.grid.clone())?;
        self.solver
            .mollification
            .get_or_insert(default_mollification(&lattice));
        let radius = 2.0 * self.length_scale();
        self.probes.potential_radius.get_or_insert(radius);
        if self.probes.count == 0 || self.probes.times == 0 {
            return Err(CliError::Config(
                "probes.count and probes.times must be positive".into(),
            ));
        }
        if let Some(fit) = &self.outputs.decay_fit {
            let t = self.domain.horizon();
            if !(fit.from > 0.0 && fit.from < fit.to && fit.to <= t * (1.0 + 1e-12))
                || !(fit.tolerance > 0.0)
            {
                return Err(CliError::Config(format!(
                    "decay_fit window must satisfy 0 < from < to <= {t}"
                )));
            }
        }
        match self.equation {
            EquationKind::Pme => {
                self.pme_config()?.validate()?;
            }
            EquationKind::Plap => {
                let cfg = self.plap_config()?;
                cfg.validate()?;
                let (mu, sigma) = self.measures()?;
                self.solver.eps = Some(cfg.effective_eps(&mu, &sigma)?);
            }
        }
        self.measures()?;
        Ok(self)
    }

    pub fn equation(&self) -> Equation {
        match self.equation {
            EquationKind::Pme => Equation::Pme {
                m: self.solver.m.unwrap_or(f64::NAN),
            },
            EquationKind::Plap => Equation::Plap {
                p: self.solver.p.unwrap_or(f64::NAN),
            },
        }
    }

    /// `diam(Ω) + T^{1/2}`, or `diam(Ω) + T^{1/p}` for p-Laplace.
    pub fn length_scale(&self) -> f64 {
        let p = match self.equation {
            EquationKind::Pme => 2.0,
            EquationKind::Plap => self.solver.p.unwrap_or(2.0),
        };
        self.domain.diam() + self.domain.horizon().powf(1.0 / p)
    }

    fn newton(&self) -> NewtonControls {
        NewtonControls {
            tol: self.solver.newton_tol,
            max_iter: self.solver.newton_max_iter,
        }
    }

    pub fn pme_config(&self) -> CliResult<PmeConfig> {
        let m = self
            .solver
            .m
            .ok_or_else(|| CliError::Config("solver.m is required".into()))?;
        let mut cfg = PmeConfig::new(m, self.domain.clone(), self.grid.clone())
            .with_absorption(self.solver.q, self.solver.k);
        cfg.n_reg = self.solver.n_reg.unwrap_or(cfg.n_reg);
        cfg.newton = self.newton();
        cfg.mollification = self.solver.mollification;
        Ok(cfg)
    }

    pub fn plap_config(&self) -> CliResult<PLapConfig> {
        let p = self
            .solver
            .p
            .ok_or_else(|| CliError::Config("solver.p is required".into()))?;
        let mut cfg = PLapConfig::new(p, self.domain.clone(), self.grid.clone())
            .with_absorption(self.solver.q, self.solver.k);
        cfg.eps = self.solver.eps;
        cfg.newton = self.newton();
        cfg.mollification = self.solver.mollification;
        Ok(cfg)
    }

    /// `(μ, σ)`: the space-time source and the initial datum.
    pub fn measures(&self) -> CliResult<(RadonMeasure, RadonMeasure)> {
        let root = Path::new("/");
        let mu = self.source.build(&self.domain, Ambient::SpaceTime, root)?;
        let sigma = self.initial.build(&self.domain, Ambient::Space, root)?;
        Ok((mu, sigma))
    }

    pub fn verify_options(&self) -> VerifyOptions {
        VerifyOptions {
            ceilings: self.ceilings.clone(),
            quadrature_nodes: self.probes.quadrature_nodes,
            probes: self.probes.count,
            probe_times: self.probes.times,
        }
    }

    /// Every input file, sorted, for hashing.
    pub fn input_files(&self) -> CliResult<Vec<PathBuf>> {
        let mut files = self.initial.referenced_files(Path::new("/"))?;
        files.extend(self.source.referenced_files(Path::new("/"))?);
        files.sort();
        files.dedup();
        Ok(files)
    }
}

fn base_dir(origin: &Path) -> PathBuf {
    let dir = origin.parent().unwrap_or(Path::new(""));
    let dir = if dir.as_os_str().is_empty() {
        Path::new(".")
    } else {
        dir
    };
    std::path::absolute(dir).unwrap_or_else(|_| dir.to_path_buf())
}

fn absolutize(desc: &mut MeasureDescription, base: &Path) {
    if let Some(f) = &mut desc.file {
        *f = base.join(&*f);
    }
    if let Some(d) = &mut desc.density {
        *d = base.join(&*d);
    }
    for p in &mut desc.product {
        absolutize(&mut p.omega, base);
    }
}

/// Replaces a measure with a reference to `path`.
pub fn measure_from_file(path: &Path) -> MeasureDescription {
    MeasureDescription {
        file: Some(std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())),
        ..MeasureDescription::default()
    }
}
