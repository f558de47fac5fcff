//! Aggregates the manifests under a directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::run::{csv_error, Manifest, MANIFEST_FILE};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub run: String,
    pub name: String,
    pub equation: String,
    pub status: String,
    pub exit_code: i32,
    pub wall_seconds: f64,
    pub failed_checks: String,
    pub decay_slope: Option<f64>,
    pub inputs_sha256: String,
}

/// Run directories at most two levels below `root`, sorted by path.
pub fn find_runs(root: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![(root.to_path_buf(), 0)];
    while let Some((dir, depth)) = stack.pop() {
        if dir.join(MANIFEST_FILE).is_file() {
            out.push(dir.clone());
        }
        if depth == 2 {
            continue;
        }
        for entry in fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
            let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push((path, depth + 1));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Writes `report.csv` into `root` and returns the rows; the worst exit
/// code among the runs is the second value.
pub fn report(root: &Path) -> CliResult<(Vec<ReportRow>, i32)> {
    let mut rows = Vec::new();
    for dir in find_runs(root)? {
        let m = Manifest::read(&dir)?;
        let run = dir.strip_prefix(root).unwrap_or(&dir).display().to_string();
        rows.push(ReportRow {
            run: if run.is_empty() { ".".into() } else { run },
            name: m.name.clone(),
            equation: m.equation.name().into(),
            status: m.status.clone(),
            exit_code: m.exit_code,
            wall_seconds: m.wall_seconds,
            failed_checks: m.failed_checks().join(" "),
            decay_slope: m.decay_fit.as_ref().map(|f| f.slope),
            inputs_sha256: m.inputs_sha256.clone(),
        });
    }
    if rows.is_empty() {
        return Err(CliError::Config(format!(
            "no {MANIFEST_FILE} under {}",
            root.display()
        )));
    }
    let path = root.join("report.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let worst = rows.iter().map(|r| r.exit_code).max().unwrap_or(0);
    Ok((rows, worst))
}
