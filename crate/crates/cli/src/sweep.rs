//! Batches of runs.
//!
//! ```toml
//! kind = "scenarios"
//! scenarios = ["a.toml", "b.toml"]
//! ```
//! ```toml
//! kind = "retention"            # one run per mollification scale
//! scenario = "base.toml"
//! scales = [0.4, 0.2, 0.1]
//! t_probe = 0.02
//! ```
//! ```toml
//! kind = "standard"             # the built-in porous-medium sweep
//! settings = { refine = 2 }
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dplab_core::estimates::{Ceilings, VerifyOptions};
use dplab_core::mass_retention_experiment;
use dplab_core::sweep::{run_sweep, standard_sweep, SweepSettings};

use crate::error::{CliError, CliResult};
use crate::run::{csv_error, run_scenario, Manifest};
use crate::scenario::{read_scenario, EquationKind, Scenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SweepDoc {
    Scenarios(ScenarioList),
    Retention(RetentionSweep),
    Standard(StandardSweep),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioList {
    pub scenarios: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetentionSweep {
    pub scenario: PathBuf,
    /// Decreasing mollification scales.
    pub scales: Vec<f64>,
    pub t_probe: f64,
    /// Atom position of the retention experiment; the domain centre by default.
    #[serde(default)]
    pub atom: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StandardSweep {
    pub settings: SweepSettings,
    pub ceilings: Ceilings,
}

impl Default for StandardSweep {
    fn default() -> Self {
        Self {
            settings: SweepSettings::default(),
            ceilings: Ceilings::default(),
        }
    }
}

/// What a sweep produced; `exit_code` is the worst over its runs.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub runs: Vec<(PathBuf, Manifest)>,
    pub exit_code: i32,
}

pub fn read_sweep(path: &Path) -> CliResult<SweepDoc> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut doc: SweepDoc = toml::from_str(&text).map_err(|e| CliError::parse(path, &e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    match &mut doc {
        SweepDoc::Scenarios(list) => list.scenarios.iter_mut().for_each(|p| *p = base.join(&*p)),
        SweepDoc::Retention(r) => r.scenario = base.join(&r.scenario),
        SweepDoc::Standard(_) => {}
    }
    Ok(doc)
}

pub fn run_sweep_doc(doc: &SweepDoc, out: &Path, jobs: usize) -> CliResult<SweepOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    match doc {
        SweepDoc::Scenarios(list) => {
            let scenarios = list
                .scenarios
                .iter()
                .map(|p| read_scenario(p))
                .collect::<CliResult<Vec<_>>>()?;
            let names: BTreeSet<&str> = scenarios.iter().map(|s| s.name.as_str()).collect();
            if names.len() != scenarios.len() {
                return Err(CliError::Config(
                    "scenario names in a sweep must be unique".into(),
                ));
            }
            pool.install(|| run_all(&scenarios, out))
        }
        SweepDoc::Retention(r) => pool.install(|| retention(r, out)),
        SweepDoc::Standard(s) => pool.install(|| standard(s, out)),
    }
}

/// Each run directory `out/<name>` is owned by one worker.
fn run_all(scenarios: &[Scenario], out: &Path) -> CliResult<SweepOutcome> {
    let runs = scenarios
        .par_iter()
        .map(|s| {
            let dir = out.join(&s.name);
            run_scenario(s, &dir).map(|m| (dir, m))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let exit_code = runs.iter().map(|(_, m)| m.exit_code).max().unwrap_or(0);
    Ok(SweepOutcome { runs, exit_code })
}

#[derive(Serialize)]
struct RetentionRow {
    scale: f64,
    time: f64,
    mass: f64,
    initial_mass: f64,
    retained: f64,
    run: String,
}

fn retention(r: &RetentionSweep, out: &Path) -> CliResult<SweepOutcome> {
    let base = read_scenario(&r.scenario)?;
    if base.equation != EquationKind::Pme {
        return Err(CliError::Config(
            "retention sweeps need a pme scenario".into(),
        ));
    }
    let scenarios = r
        .scales
        .iter()
        .enumerate()
        .map(|(i, &scale)| {
            let mut s = base.clone();
            s.name = format!("{}-scale{i}", base.name);
            s.solver.mollification = Some(scale);
            s.resolve()
        })
        .collect::<CliResult<Vec<_>>>()?;
    let outcome = run_all(&scenarios, out)?;
    let atom = r.atom.clone().unwrap_or_else(|| base.domain.center());
    let points = mass_retention_experiment(&base.pme_config()?, &atom, &r.scales, r.t_probe)?;
    let path = out.join("retention.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    for (p, s) in points.iter().zip(&scenarios) {
        w.serialize(RetentionRow {
            scale: p.scale,
            time: p.time,
            mass: p.mass,
            initial_mass: p.initial_mass,
            retained: p.mass / p.initial_mass,
            run: s.name.clone(),
        })
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(outcome)
}

#[derive(Serialize)]
struct SweepRow {
    case: String,
    m: f64,
    q: f64,
    dim: usize,
    h: f64,
    dt: f64,
    data_mass: f64,
    max_mass: f64,
    absorption_integral: f64,
    newton_iters: usize,
    estimate_id: String,
    constant: f64,
    ceiling: f64,
    pass: bool,
}

fn standard(s: &StandardSweep, out: &Path) -> CliResult<SweepOutcome> {
    let cases = standard_sweep();
    let opts = VerifyOptions {
        ceilings: s.ceilings.clone(),
        ..VerifyOptions::default()
    };
    let results = run_sweep(&cases, &s.settings, &opts);
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let mut exit_code = 0;
    for (case, res) in cases.iter().zip(results) {
        let o = match res {
            Ok(o) => o,
            Err(e) => {
                let e = CliError::from(e);
                eprintln!("{}: {e}", case.label());
                exit_code = exit_code.max(e.exit_code());
                continue;
            }
        };
        if !o.all_pass() {
            exit_code = exit_code.max(2);
        }
        for r in &o.reports {
            w.serialize(SweepRow {
                case: case.label(),
                m: case.m,
                q: o.q,
                dim: case.dim,
                h: o.h,
                dt: o.dt,
                data_mass: o.data_mass,
                max_mass: o.max_mass,
                absorption_integral: o.absorption_integral,
                newton_iters: o.newton_iters,
                estimate_id: r.id.name().into(),
                constant: r.constant,
                ceiling: r.ceiling,
                pass: r.pass,
            })
            .map_err(|e| csv_error(&path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(SweepOutcome {
        runs: Vec::new(),
        exit_code,
    })
}
