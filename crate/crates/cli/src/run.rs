//! Executes a scenario into a run directory.
//!
//! | file            | content                                              |
//! |-----------------|------------------------------------------------------|
//! | `scenario.toml` | the resolved scenario                                |
//! | `u.grid`        | solution, space-time `DPLGRID1`                      |
//! | `initial.grid`  | discretized initial datum                            |
//! | `source.grid`   | discretized source per unit time                     |
//! | `steps.csv`     | per-step mass, Newton iterations and absorption      |
//! | `potential.csv` | parabolic potential of the data on the probe cells   |
//! | `reports.csv`   | verifier output                                      |
//! | `manifest.json` | hashes, versions, wall time, status                  |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dplab_core::estimates::{probe_cells, verify_estimates, EstimateReport};
use dplab_core::gridfile::{read_grid, write_grid};
use dplab_core::potentials::{evaluate, PotentialKind, PotentialQuery};
use dplab_core::{solve_plap, solve_pme, GridField, Lattice, Layout, SolveResult, StepRecord};

use crate::error::{CliError, CliResult};
use crate::scenario::{read_scenario, DecayFit, EquationKind, Scenario};

pub const SCENARIO_FILE: &str = "scenario.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub equation: EquationKind,
    pub seed: u64,
    pub status: String,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// SHA-256 over the resolved scenario and every file it references.
    pub inputs_sha256: String,
    pub versions: BTreeMap<String, String>,
    pub wall_seconds: f64,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub estimates: Vec<EstimateSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_fit: Option<DecayFitResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newton_iters: Option<usize>,
    /// The resolved scenario, every default included.
    pub scenario: String,
}

impl Manifest {
    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn failed_checks(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .estimates
            .iter()
            .filter(|e| !e.pass)
            .map(|e| e.id.clone())
            .collect();
        if self.decay_fit.as_ref().is_some_and(|f| !f.pass) {
            out.push("decay-fit".into());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub id: String,
    pub constant: f64,
    pub ceiling: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFitResult {
    pub from: f64,
    pub to: f64,
    pub expect: f64,
    pub tolerance: f64,
    pub slope: f64,
    pub points: usize,
    pub pass: bool,
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("dplab-core".to_string(), dplab_core::VERSION.to_string()),
        (
            "dplab-cli".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        ),
    ])
}

pub fn inputs_hash(scenario: &Scenario) -> CliResult<String> {
    let mut hasher = Sha256::new();
    hasher.update(scenario.emit().as_bytes());
    for path in scenario.input_files()? {
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        hasher.update(path.to_string_lossy().as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Default)]
struct Progress {
    outputs: Vec<String>,
    estimates: Vec<EstimateSummary>,
    decay_fit: Option<DecayFitResult>,
    newton_iters: Option<usize>,
}

/// Runs `scenario` into `dir`. Solver and verification failures are
/// recorded in the manifest, which is returned either way; only failures
/// to write the directory itself are errors.
pub fn run_scenario(scenario: &Scenario, dir: &Path) -> CliResult<Manifest> {
    let start = Instant::now();
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let text = scenario.emit();
    write_file(&dir.join(SCENARIO_FILE), text.as_bytes())?;
    let mut progress = Progress {
        outputs: vec![SCENARIO_FILE.into()],
        ..Progress::default()
    };
    let outcome =
        inputs_hash(scenario).and_then(|hash| execute(scenario, dir, &mut progress).map(|()| hash));
    let hash = match &outcome {
        Ok(h) => h.clone(),
        Err(_) => inputs_hash(scenario).unwrap_or_default(),
    };
    let err = outcome.err();
    if let Some(CliError::Io { .. }) = &err {
        return Err(err.unwrap());
    }
    progress.outputs.push(MANIFEST_FILE.into());
    let manifest = Manifest {
        name: scenario.name.clone(),
        equation: scenario.equation,
        seed: scenario.seed,
        status: err.as_ref().map_or("pass", CliError::kind).to_string(),
        exit_code: err.as_ref().map_or(0, CliError::exit_code),
        error_kind: err.as_ref().map(|e| e.kind().to_string()),
        error: err.as_ref().map(ToString::to_string),
        inputs_sha256: hash,
        versions: versions(),
        wall_seconds: start.elapsed().as_secs_f64(),
        outputs: progress.outputs,
        estimates: progress.estimates,
        decay_fit: progress.decay_fit,
        newton_iters: progress.newton_iters,
        scenario: text,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

fn execute(s: &Scenario, dir: &Path, progress: &mut Progress) -> CliResult<()> {
    let (mu, sigma) = s.measures()?;
    let result = match s.equation {
        EquationKind::Pme => solve_pme(&s.pme_config()?, &mu, &sigma)?,
        EquationKind::Plap => solve_plap(&s.plap_config()?, &mu, &sigma)?,
    };
    progress.newton_iters = Some(result.total_newton_iters());
    for (name, field) in [
        ("u.grid", &result.u),
        ("initial.grid", &result.initial),
        ("source.grid", &result.source),
    ] {
        write_grid(dir.join(name), field)?;
        progress.outputs.push(name.into());
    }
    write_steps(&dir.join("steps.csv"), &result.steps)?;
    progress.outputs.push("steps.csv".into());

    if s.outputs.potentials {
        write_potential(s, &result, &mu, &sigma, &dir.join("potential.csv"))?;
        progress.outputs.push("potential.csv".into());
    }
    let mut failed = Vec::new();
    if s.outputs.verify {
        let reports = verify_estimates(&result, &mu, &sigma, s.equation(), &s.verify_options())?;
        write_reports(&dir.join("reports.csv"), &reports)?;
        progress.outputs.push("reports.csv".into());
        failed.extend(
            reports
                .iter()
                .filter(|r| !r.pass)
                .map(|r| r.id.name().to_string()),
        );
        progress.estimates = reports
            .iter()
            .map(|r| EstimateSummary {
                id: r.id.name().into(),
                constant: r.constant,
                ceiling: r.ceiling,
                pass: r.pass,
            })
            .collect();
    }
    if let Some(fit) = &s.outputs.decay_fit {
        let res = decay_fit(&result, fit)?;
        if !res.pass {
            failed.push("decay-fit".into());
        }
        progress.decay_fit = Some(res);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification {
            failed: failed.len(),
            names: failed.join(", "),
        })
    }
}

/// Least-squares slope of `log max|u(·,t)|` against `log t` over the window.
pub fn decay_fit(result: &SolveResult, fit: &DecayFit) -> CliResult<DecayFitResult> {
    let pts: Vec<(f64, f64)> = result
        .steps
        .iter()
        .filter(|r| r.time >= fit.from * (1.0 - 1e-12) && r.time <= fit.to * (1.0 + 1e-12))
        .map(|r| {
            let peak = result
                .u
                .slice(r.step)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            (r.time.ln(), peak.ln())
        })
        .filter(|(_, y)| y.is_finite())
        .collect();
    if pts.len() < 2 {
        return Err(CliError::Config(format!(
            "decay fit window [{}, {}] holds fewer than two steps with nonzero solution",
            fit.from, fit.to
        )));
    }
    let n = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx) * (x - mx))
    });
    let slope = sxy / sxx;
    Ok(DecayFitResult {
        from: fit.from,
        to: fit.to,
        expect: fit.expect,
        tolerance: fit.tolerance,
        slope,
        points: pts.len(),
        pass: (slope - fit.expect).abs() <= fit.tolerance * fit.expect.abs(),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Config(format!("{}: {other:?}", path.display())),
    }
}

fn write_steps(path: &Path, steps: &[StepRecord]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    for s in steps {
        w.serialize(s).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_steps(path: &Path) -> CliResult<Vec<StepRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

#[derive(Serialize)]
struct ReportRow<'a> {
    estimate_id: &'a str,
    lhs: f64,
    rhs: f64,
    constant: f64,
    ceiling: f64,
    pass: bool,
    samples: usize,
}

pub fn write_reports(path: &Path, reports: &[EstimateReport]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    for r in reports {
        w.serialize(ReportRow {
            estimate_id: r.id.name(),
            lhs: r.lhs,
            rhs: r.rhs,
            constant: r.constant,
            ceiling: r.ceiling,
            pass: r.pass,
            samples: r.samples,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_potential(
    s: &Scenario,
    result: &SolveResult,
    mu: &dplab_core::RadonMeasure,
    sigma: &dplab_core::RadonMeasure,
    path: &Path,
) -> CliResult<()> {
    let lattice = result.lattice();
    let cells = probe_cells(lattice, &[mu, sigma], s.probes.count, s.probes.times);
    let data = mu.abs().with_initial(sigma.abs())?;
    let dim = lattice.dim();
    let query = PotentialQuery {
        points: cells
            .iter()
            .map(|&(c, j)| (lattice.center(c)[..dim].to_vec(), lattice.time_end(j)))
            .collect(),
        radius: s.probes.potential_radius.unwrap_or(2.0 * s.length_scale()),
        p: None,
        quadrature_nodes: s.probes.quadrature_nodes,
    };
    let values = evaluate(PotentialKind::Parabolic, &data, &query, None)?;
    let mut w = csv_writer(path)?;
    w.write_record(["cell", "step", "x", "t", "u", "potential", "flag"])
        .map_err(|e| csv_error(path, e))?;
    for ((&(c, j), (x, t)), v) in cells.iter().zip(&query.points).zip(&values) {
        let u = result.u.slice(j)[c];
        w.write_record([
            c.to_string(),
            j.to_string(),
            join_coords(x),
            num(*t),
            num(u),
            num(v.value()),
            v.flag().to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Shortest round-trip text, in exponent form for very small or large values.
pub(crate) fn num(v: f64) -> String {
    if v != 0.0 && v.is_finite() && (v.abs() < 1e-5 || v.abs() >= 1e16) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

pub(crate) fn join_coords(x: &[f64]) -> String {
    x.iter().map(|&v| num(v)).collect::<Vec<_>>().join(" ")
}

/// A finished run reloaded from disk.
pub struct SavedRun {
    pub dir: PathBuf,
    pub scenario: Scenario,
    pub result: SolveResult,
}

impl SavedRun {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let scenario = read_scenario(&dir.join(SCENARIO_FILE))?;
        let lattice = Lattice::new(scenario.domain.clone(), scenario.grid.clone())?;
        let field = |name: &str, layout: Layout| -> CliResult<GridField> {
            let raw = read_grid(dir.join(name))?;
            if raw.layout != layout {
                return Err(CliError::Config(format!(
                    "{name} has layout {:?}, expected {layout:?}",
                    raw.layout
                )));
            }
            Ok(raw.into_field(lattice.clone())?)
        };
        let result = SolveResult {
            u: field("u.grid", Layout::SpaceTime)?,
            initial: field("initial.grid", Layout::Space)?,
            source: field("source.grid", Layout::SpaceTime)?,
            steps: read_steps(&dir.join("steps.csv"))?,
            mollification_scale: scenario.solver.mollification.ok_or_else(|| {
                CliError::Config("scenario lacks a resolved mollification".into())
            })?,
            newton_tol: scenario.solver.newton_tol,
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            scenario,
            result,
        })
    }

    pub fn verify(
        &self,
        ceilings: Option<&dplab_core::estimates::Ceilings>,
    ) -> CliResult<Vec<EstimateReport>> {
        let (mu, sigma) = self.scenario.measures()?;
        let mut opts = self.scenario.verify_options();
        if let Some(c) = ceilings {
            opts.ceilings = c.clone();
        }
        Ok(verify_estimates(
            &self.result,
            &mu,
            &sigma,
            self.scenario.equation(),
            &opts,
        )?)
    }
}
