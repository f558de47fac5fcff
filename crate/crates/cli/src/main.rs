use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dplab_cli::jobs::{self, CapacityKind, PotentialJob};
use dplab_cli::report::report;
use dplab_cli::run::{run_scenario, write_reports, SavedRun};
use dplab_cli::scenario::{measure_from_file, Scenario};
use dplab_cli::sweep::{read_sweep, run_sweep_doc};
use dplab_cli::{CliError, CliResult, EquationKind};
use dplab_core::estimates::Ceilings;
use dplab_core::PotentialKind;

/// Porous-medium and p-Laplace solvers with measure data, potentials,
/// capacities and bound verification.
///
/// Exit codes: 0 all checks pass, 2 verification failure, 3 solver
/// failure, 4 configuration error.
#[derive(Parser)]
#[command(name = "dplab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a porous-medium scenario into a run directory.
    SolvePme {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Solve a p-Laplace scenario into a run directory.
    SolvePlap {
        #[command(flatten)]
        run: RunArgs,
        /// Overrides solver.p.
        #[arg(long)]
        p: Option<f64>,
        /// Overrides solver.eps.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Evaluate a potential at a list of points.
    Potential {
        #[arg(long, value_enum)]
        kind: PotentialArg,
        /// Truncation radius, or the base radius for `pp`.
        #[arg(long = "R")]
        radius: f64,
        #[arg(long)]
        p: Option<f64>,
        /// CSV of points: coordinates then t.
        #[arg(long)]
        points: PathBuf,
        /// Measure document (domain, ambient, measure).
        #[arg(long)]
        measure: PathBuf,
        #[arg(long, default_value_t = 256)]
        nodes: usize,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the capacity of a set of grid cells.
    Capacity {
        #[arg(long, value_enum)]
        kind: CapacityArg,
        #[arg(long, required_if_eq("kind", "bessel"))]
        alpha: Option<f64>,
        #[arg(long, required_if_eq("kind", "bessel"))]
        s: Option<f64>,
        #[arg(long, required_if_eq("kind", "parabolic"))]
        a: Option<f64>,
        #[arg(long, required_if_eq("kind", "parabolic"))]
        b: Option<f64>,
        /// Set document (layout, domain, grid, cell indices).
        #[arg(long)]
        set: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the verifier on a finished run directory.
    Verify {
        #[arg(long)]
        run: PathBuf,
        /// Ceilings TOML replacing the scenario's; absent keys take the defaults.
        #[arg(long)]
        ceilings: Option<PathBuf>,
        /// Output CSV; `verify.csv` in the run directory when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a batch of scenarios in parallel.
    Sweep {
        doc: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, env = "DPLAB_OUT", default_value = "runs")]
        out: PathBuf,
    },
    /// Summarize the run directories below a directory.
    Report { dir: PathBuf },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario document.
    #[arg(long)]
    config: PathBuf,
    /// Source measure file, replacing the scenario's.
    #[arg(long)]
    measure: Option<PathBuf>,
    /// Initial measure file, replacing the scenario's.
    #[arg(long)]
    sigma: Option<PathBuf>,
    /// Run directory; `runs/<name>` when absent.
    #[arg(long, env = "DPLAB_OUT")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PotentialArg {
    Parabolic,
    Elliptic,
    Pp,
}

#[derive(Clone, Copy, ValueEnum)]
enum CapacityArg {
    Bessel,
    Parabolic,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are configuration errors; keep 2 for failed checks
            return ExitCode::from(if e.use_stderr() { 4 } else { 0 });
        }
    };
    let code = match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.kind());
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    match path {
        Some(p) => Ok(Box::new(
            fs::File::create(p).map_err(|e| CliError::io(p, e))?,
        )),
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn solve(
    equation: EquationKind,
    args: RunArgs,
    tweak: impl FnOnce(&mut Scenario),
) -> CliResult<i32> {
    let text = fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
    let mut s = Scenario::from_toml(&text, &args.config)?;
    if s.equation != equation {
        return Err(CliError::Config(format!(
            "{} is a {} scenario",
            args.config.display(),
            s.equation.name()
        )));
    }
    if let Some(m) = &args.measure {
        s.source = measure_from_file(m);
    }
    if let Some(m) = &args.sigma {
        s.initial = measure_from_file(m);
    }
    tweak(&mut s);
    let s = s.resolve()?;
    let dir = args.out.unwrap_or_else(|| Path::new("runs").join(&s.name));
    let manifest = run_scenario(&s, &dir)?;
    match &manifest.error {
        Some(e) => eprintln!("{}: {} [{}]", dir.display(), e, manifest.status),
        None => eprintln!("{}: pass", dir.display()),
    }
    Ok(manifest.exit_code)
}

fn dispatch(command: Command) -> CliResult<i32> {
    match command {
        Command::SolvePme { run } => solve(EquationKind::Pme, run, |_| {}),
        Command::SolvePlap { run, p, eps } => solve(EquationKind::Plap, run, |s| {
            if p.is_some() {
                s.solver.p = p;
                // a new exponent invalidates any echoed data-scaled default
                s.solver.eps = None;
            }
            if eps.is_some() {
                s.solver.eps = eps;
            }
        }),
        Command::Potential {
            kind,
            radius,
            p,
            points,
            measure,
            nodes,
            out,
        } => {
            let kind = match kind {
                PotentialArg::Parabolic => PotentialKind::Parabolic,
                PotentialArg::Elliptic => PotentialKind::Elliptic,
                PotentialArg::Pp => PotentialKind::Pp,
            };
            let job = PotentialJob {
                kind,
                radius,
                p,
                points: &points,
                measure: &measure,
                quadrature_nodes: nodes,
            };
            jobs::potential(&job, &mut *output(out.as_deref())?)?;
            Ok(0)
        }
        Command::Capacity {
            kind,
            alpha,
            s,
            a,
            b,
            set,
            out,
        } => {
            let kind = match kind {
                CapacityArg::Bessel => CapacityKind::Bessel {
                    alpha: alpha.unwrap_or_default(),
                    s: s.unwrap_or_default(),
                },
                CapacityArg::Parabolic => CapacityKind::Parabolic {
                    a: a.unwrap_or_default(),
                    b: b.unwrap_or_default(),
                },
            };
            let est = jobs::capacity(&kind, &set, &mut *output(out.as_deref())?)?;
            Ok(if est.converged { 0 } else { 3 })
        }
        Command::Verify { run, ceilings, out } => {
            let ceilings = match ceilings {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                    Some(
                        toml::from_str::<Ceilings>(&text)
                            .map_err(|e| CliError::parse(&path, &e))?,
                    )
                }
                None => None,
            };
            let saved = SavedRun::load(&run)?;
            let reports = saved.verify(ceilings.as_ref())?;
            let path = out.unwrap_or_else(|| run.join("verify.csv"));
            write_reports(&path, &reports)?;
            let failed: Vec<&str> = reports
                .iter()
                .filter(|r| !r.pass)
                .map(|r| r.id.name())
                .collect();
            for r in &reports {
                println!(
                    "{:<18} {:>12.5e} / {:<10} {}",
                    r.id.name(),
                    r.constant,
                    r.ceiling,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
            if failed.is_empty() {
                Ok(0)
            } else {
                Err(CliError::Verification {
                    failed: failed.len(),
                    names: failed.join(", "),
                })
            }
        }
        Command::Sweep { doc, jobs, out } => {
            if jobs == 0 {
                return Err(CliError::Config("--jobs must be at least 1".into()));
            }
            let sweep = read_sweep(&doc)?;
            let outcome = run_sweep_doc(&sweep, &out, jobs)?;
            for (dir, m) in &outcome.runs {
                eprintln!("{}: {}", dir.display(), m.status);
            }
            Ok(outcome.exit_code)
        }
        Command::Report { dir } => {
            let (rows, worst) = report(&dir)?;
            for r in &rows {
                println!(
                    "{:<30} {:<6} {:<14} {:>8.2}s {}",
                    r.run, r.equation, r.status, r.wall_seconds, r.failed_checks
                );
            }
            Ok(worst)
        }
    }
}
