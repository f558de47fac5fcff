//! One-shot `potential` and `capacity` evaluations.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use dplab_core::capacity::{bessel_capacity, parabolic_capacity, CapacityEstimate, CompactSet};
use dplab_core::measure_file::MeasureDescription;
use dplab_core::potentials::{evaluate, PotentialKind, PotentialQuery};
use dplab_core::{Ambient, BoxDomain, GridSpec, Lattice, Layout};

use crate::error::{CliError, CliResult};
use crate::run::{csv_error, join_coords, num};

/// A measure together with the box it lives on.
///
/// ```toml
/// ambient = "space-time"      # default; "space" for elliptic queries
/// domain = { lower = [0.0, 0.0], upper = [1.0, 1.0], horizon = 1.0 }
/// [measure]
/// atoms = [{ x = [0.5, 0.5], t = 0.5, mass = 1.0 }]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureDoc {
    #[serde(default = "space_time")]
    pub ambient: Ambient,
    pub domain: BoxDomain,
    pub measure: MeasureDescription,
}

fn space_time() -> Ambient {
    Ambient::SpaceTime
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::parse(path, &e))
}

fn base_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Query points, one per row: `N` coordinates then `t` (optional for
/// elliptic queries). A leading non-numeric row is taken as a header.
pub fn read_points(path: &Path, dim: usize, need_time: bool) -> CliResult<Vec<(Vec<f64>, f64)>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let vals: Result<Vec<f64>, _> = row.iter().map(str::parse::<f64>).collect();
        let vals = match vals {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(CliError::Config(format!(
                    "{}: row {}: {e}",
                    path.display(),
                    i + 1
                )))
            }
        };
        let t = match (vals.len(), need_time) {
            (n, _) if n == dim + 1 => vals[dim],
            (n, false) if n == dim => 0.0,
            (n, _) => {
                return Err(CliError::Config(format!(
                    "{}: row {} has {n} values, expected {}",
                    path.display(),
                    i + 1,
                    dim + 1
                )))
            }
        };
        out.push((vals[..dim].to_vec(), t));
    }
    Ok(out)
}

pub struct PotentialJob<'a> {
    pub kind: PotentialKind,
    pub radius: f64,
    pub p: Option<f64>,
    pub points: &'a Path,
    pub measure: &'a Path,
    pub quadrature_nodes: usize,
}

/// Writes `x,t,value,flag` rows; `x` is space-separated coordinates.
pub fn potential(job: &PotentialJob, out: &mut dyn Write) -> CliResult<()> {
    let doc: MeasureDoc = read_toml(job.measure)?;
    let mu = doc
        .measure
        .build(&doc.domain, doc.ambient, base_of(job.measure))?;
    let points = read_points(
        job.points,
        doc.domain.dim(),
        job.kind != PotentialKind::Elliptic,
    )?;
    let query = PotentialQuery {
        points,
        radius: job.radius,
        p: job.p,
        quadrature_nodes: job.quadrature_nodes,
    };
    let values = evaluate(job.kind, &mu, &query, None)?;
    let mut w = csv::Writer::from_writer(out);
    let name = Path::new("<output>");
    w.write_record(["x", "t", "value", "flag"])
        .map_err(|e| csv_error(name, e))?;
    for ((x, t), v) in query.points.iter().zip(&values) {
        w.write_record([
            join_coords(x),
            num(*t),
            num(v.value()),
            v.flag().to_string(),
        ])
        .map_err(|e| csv_error(name, e))?;
    }
    w.flush().map_err(|e| CliError::io(name, e))
}

/// A set of grid cells.
///
/// ```toml
/// layout = "space"            # or "space-time": indices start with the step
/// domain = { lower = [-1.0, -1.0], upper = [1.0, 1.0], horizon = 1.0 }
/// grid = { cells_per_axis = [32, 32], time_steps = 1 }
/// cells = [[15, 15], [15, 16]]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetDoc {
    pub layout: Layout,
    pub domain: BoxDomain,
    pub grid: GridSpec,
    pub cells: Vec<Vec<usize>>,
}

impl SetDoc {
    pub fn build(&self) -> CliResult<CompactSet> {
        let lattice = Lattice::new(self.domain.clone(), self.grid.clone())?;
        let mut flat = Vec::with_capacity(self.cells.len());
        for idx in &self.cells {
            let (step, space) = match self.layout {
                Layout::Space => (0, &idx[..]),
                Layout::SpaceTime if !idx.is_empty() => (idx[0], &idx[1..]),
                Layout::SpaceTime => (usize::MAX, &idx[..]),
            };
            let ok = space.len() == lattice.dim()
                && step < lattice.time_steps().max(1)
                && space.iter().zip(lattice.shape()).all(|(i, n)| i < n);
            if !ok {
                return Err(CliError::Config(format!(
                    "cell index {idx:?} outside the {:?} grid",
                    self.layout
                )));
            }
            flat.push(step * lattice.n_space() + lattice.flat_index(space));
        }
        Ok(CompactSet::new(lattice, self.layout, flat)?)
    }
}

pub enum CapacityKind {
    Bessel { alpha: f64, s: f64 },
    Parabolic { a: f64, b: f64 },
}

pub fn capacity(
    kind: &CapacityKind,
    set: &Path,
    out: &mut dyn Write,
) -> CliResult<CapacityEstimate> {
    let doc: SetDoc = read_toml(set)?;
    let set = doc.build()?;
    let est = match *kind {
        CapacityKind::Bessel { alpha, s } => bessel_capacity(&set, alpha, s)?,
        CapacityKind::Parabolic { a, b } => parabolic_capacity(&set, a, b)?,
    };
    let name = Path::new("<output>");
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "value",
        "lower_bound",
        "feasibility_residual",
        "stationarity",
        "iterations",
        "converged",
        "unknowns",
        "h",
    ])
    .map_err(|e| csv_error(name, e))?;
    w.write_record([
        num(est.value),
        est.lower_bound.map_or(String::new(), num),
        num(est.feasibility_residual),
        num(est.stationarity),
        est.iterations.to_string(),
        est.converged.to_string(),
        est.unknowns.to_string(),
        num(est.h),
    ])
    .map_err(|e| csv_error(name, e))?;
    w.flush().map_err(|e| CliError::io(name, e))?;
    Ok(est)
}
