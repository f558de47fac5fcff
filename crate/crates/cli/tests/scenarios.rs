use std::fs;
use std::path::Path;

use dplab_cli::run::{run_scenario, Manifest, SavedRun};
use dplab_cli::sweep::{read_sweep, run_sweep_doc};
use dplab_cli::{parse_scenario, CliError, Scenario};

const MINIMAL: &str = r#"
name = "minimal"
equation = "pme"
domain = { lower = [-1.0, -1.0], upper = [1.0, 1.0], horizon = 0.04 }
grid = { cells_per_axis = [20, 20], time_steps = 8 }
[solver]
m = 2.0
"#;

fn parse(text: &str) -> Result<Scenario, CliError> {
    parse_scenario(text, Path::new("scenario.toml"))
}

#[test]
fn minimal_scenario_gets_documented_defaults() {
    let s = parse(MINIMAL).unwrap();
    let v = &s.solver;
    assert_eq!((v.q, v.k, v.n_reg), (0.0, f64::INFINITY, Some(1e4)));
    assert_eq!((v.newton_tol, v.newton_max_iter), (1e-9, 60));
    // twice the cell width 2/20
    assert!((v.mollification.unwrap() - 0.2).abs() < 1e-15);
    assert_eq!(
        (s.probes.count, s.probes.times, s.probes.quadrature_nodes),
        (400, 8, 256)
    );
    let d = 8f64.sqrt() + 0.2;
    assert!((s.probes.potential_radius.unwrap() - 2.0 * d).abs() < 1e-12);
    assert!(s.outputs.potentials && s.outputs.verify);
    assert_eq!(s.ceilings, dplab_core::estimates::Ceilings::default());
    assert_eq!(s.seed, 0);

    let echoed = s.emit();
    for key in [
        "k = inf",
        "n_reg",
        "mollification",
        "newton_tol",
        "count",
        "potential_radius",
        "mass-bound",
    ] {
        assert!(echoed.contains(key), "{key} missing from\n{echoed}");
    }
}

#[test]
fn hypothesis_violations_are_reported_as_such() {
    let bad_q = MINIMAL.replace("m = 2.0", "m = 2.0\nq = 2.0");
    match parse(&bad_q) {
        Err(CliError::Hypothesis(msg)) => assert!(msg.contains("q > max(1, m)"), "{msg}"),
        other => panic!("{other:?}"),
    }
    // fast diffusion below (N-2)/N is only excluded for N >= 3
    let bad_m = MINIMAL
        .replace("m = 2.0", "m = 0.2")
        .replace("[-1.0, -1.0]", "[-1.0, -1.0, -1.0]")
        .replace("[1.0, 1.0]", "[1.0, 1.0, 1.0]")
        .replace("[20, 20]", "[8, 8, 8]")
        .replace("time_steps = 8", "time_steps = 2");
    assert!(matches!(parse(&bad_m), Err(CliError::Hypothesis(_))));
    let plap = MINIMAL
        .replace("\"pme\"", "\"plap\"")
        .replace("m = 2.0", "p = 2.0");
    assert!(matches!(parse(&plap), Err(CliError::Hypothesis(_))));
    let plap_q = MINIMAL
        .replace("\"pme\"", "\"plap\"")
        .replace("m = 2.0", "p = 3.0\nq = 1.5");
    assert!(matches!(parse(&plap_q), Err(CliError::Hypothesis(_))));
}

#[test]
fn unknown_keys_missing_files_and_bad_values_are_distinct() {
    let typo = MINIMAL.replace("m = 2.0", "m = 2.0\nmolification = 0.3");
    let e = parse(&typo).unwrap_err();
    assert!(matches!(e, CliError::UnknownKey { .. }), "{e:?}");
    let nested = format!("{MINIMAL}[probes]\ncounts = 3\n");
    assert!(matches!(parse(&nested), Err(CliError::UnknownKey { .. })));
    let ceiling = format!("{MINIMAL}[ceilings]\nmass = 2.0\n");
    assert!(matches!(parse(&ceiling), Err(CliError::UnknownKey { .. })));

    let dir = tempfile::tempdir().unwrap();
    let origin = dir.path().join("s.toml");
    let missing = format!("{MINIMAL}[initial]\ndensity = \"nowhere.grid\"\n");
    let e = parse_scenario(&missing, &origin).unwrap_err();
    match &e {
        CliError::MissingFile { path } => assert_eq!(path, &dir.path().join("nowhere.grid")),
        other => panic!("{other:?}"),
    }

    let kinds: Vec<&str> = [
        parse(&typo).unwrap_err(),
        e,
        parse(&MINIMAL.replace("m = 2.0", "m = 2.0\nq = 1.0")).unwrap_err(),
        parse(&MINIMAL.replace("m = 2.0", "m = 2.0\nnewton_tol = -1.0")).unwrap_err(),
    ]
    .iter()
    .map(|e| {
        assert_eq!(e.exit_code(), 4);
        e.kind()
    })
    .collect();
    assert_eq!(
        kinds,
        ["unknown-key", "missing-file", "hypothesis", "config"]
    );
}

#[test]
fn emit_then_parse_is_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
        name = "mixed"
        equation = "plap"
        seed = 7
        domain = { lower = [-1.0, -1.0], upper = [1.0, 1.0], horizon = 0.05 }
        grid = { cells_per_axis = [16, 16], time_steps = 10 }
        [solver]
        p = 3.0
        q = 2.5
        k = 50.0
        mollification = 0.3
        [source]
        atoms = [{ x = [0.2, 0.0], t = 0.01, mass = -0.5 }]
        [[source.product]]
        F = [1.0, 2.0]
        omega = { file = "omega.toml" }
        [outputs]
        potentials = false
    "#;
    fs::write(
        dir.path().join("omega.toml"),
        "atoms = [{ x = [0.0, 0.4], mass = 1.0 }]",
    )
    .unwrap();
    let s = parse_scenario(text, &dir.path().join("s.toml")).unwrap();
    assert!(s.solver.eps.unwrap() > 0.0);
    let again = parse_scenario(&s.emit(), Path::new("/elsewhere/echo.toml")).unwrap();
    assert_eq!(again, s);
    assert_eq!(again.emit(), s.emit());
}

fn write_and_run(text: &str, dir: &Path) -> Manifest {
    let s = parse(text).unwrap();
    run_scenario(&s, dir).unwrap()
}

#[test]
fn zero_data_run_passes_everything() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_and_run(MINIMAL, dir.path());
    assert_eq!((m.status.as_str(), m.exit_code), ("pass", 0));
    assert!(!m.estimates.is_empty() && m.estimates.iter().all(|e| e.pass && e.constant == 0.0));
    for f in [
        "scenario.toml",
        "u.grid",
        "initial.grid",
        "source.grid",
        "steps.csv",
        "potential.csv",
        "reports.csv",
        "manifest.json",
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
        assert!(m.outputs.iter().any(|o| o == f), "{f} not listed");
    }
    assert_eq!(m.inputs_sha256.len(), 64);
    assert_eq!(Manifest::read(dir.path()).unwrap(), m);
    // the manifest carries the resolved scenario
    assert_eq!(parse(&m.scenario).unwrap(), parse(MINIMAL).unwrap());
}

/// Least-squares slope of log peak against log time, from the stored field.
fn peak_slope_from_disk(dir: &Path, from: f64, to: f64) -> f64 {
    let saved = SavedRun::load(dir).unwrap();
    let res = &saved.result;
    let pts: Vec<(f64, f64)> = res
        .steps
        .iter()
        .filter(|s| s.time >= from - 1e-12 && s.time <= to + 1e-12)
        .map(|s| {
            (
                s.time.ln(),
                res.u.slice(s.step).iter().cloned().fold(0.0, f64::max).ln(),
            )
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

const BARENBLATT: &str = r#"
name = "barenblatt"
equation = "pme"
domain = { lower = [-1.5, -1.5], upper = [1.5, 1.5], horizon = 0.1 }
grid = { cells_per_axis = [48, 48], time_steps = 100 }
[solver]
m = 2.0
mollification = 0.125
[initial]
atoms = [{ x = [0.0, 0.0], mass = 1.0 }]
[outputs]
decay_fit = { from = 0.01, to = 0.1, expect = -0.5 }
"#;

#[test]
fn barenblatt_run_records_the_decay_fit() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_and_run(BARENBLATT, dir.path());
    let fit = m.decay_fit.clone().expect("fit recorded");
    // self-similar peak decay t^{-N/(N(m-1)+2)} with N = m = 2
    let (n, mm) = (2.0, 2.0);
    let exact = -n / (n * (mm - 1.0) + 2.0);
    assert_eq!(fit.expect, exact);
    assert!(
        (fit.slope - exact).abs() <= 0.1 * exact.abs(),
        "{}",
        fit.slope
    );
    assert!(fit.pass && m.exit_code == 0);
    assert_eq!(fit.points, 91);
    let independent = peak_slope_from_disk(dir.path(), 0.01, 0.1);
    assert!((independent - fit.slope).abs() < 1e-12);

    // an impossible expectation fails the run with the verification code
    let strict = BARENBLATT.replace("expect = -0.5", "expect = -0.5, tolerance = 0.001");
    let dir2 = tempfile::tempdir().unwrap();
    let m2 = write_and_run(&strict, dir2.path());
    assert_eq!((m2.status.as_str(), m2.exit_code), ("verification", 2));
    assert_eq!(m2.failed_checks(), ["decay-fit"]);
}

#[test]
fn identical_scenarios_give_identical_bytes() {
    let text = format!(
        "{}\n[source]\natoms = [{{ x = [0.3, -0.2], t = 0.01, mass = 0.7 }}]\n",
        MINIMAL
            .replace("m = 2.0", "m = 2.0\nq = 2.5")
            .replace("\"minimal\"", "\"det\"")
    )
    .replace(
        "\n[solver]",
        "\n[initial]\natoms = [{ x = [0.0, 0.0], mass = 1.0 }]\n[solver]",
    );
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = write_and_run(&text, a.path());
    let mb = write_and_run(&text, b.path());
    assert_eq!(ma.inputs_sha256, mb.inputs_sha256);
    for f in [
        "steps.csv",
        "potential.csv",
        "reports.csv",
        "u.grid",
        "scenario.toml",
    ] {
        let (x, y) = (
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
        );
        assert!(!x.is_empty() && x == y, "{f} differs");
    }
}

#[test]
fn reloaded_run_verifies_to_the_same_reports() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace(
        "\n[solver]",
        "\n[initial]\natoms = [{ x = [0.1, 0.1], mass = 2.0 }]\n[solver]",
    );
    let m = write_and_run(&text, dir.path());
    let again = SavedRun::load(dir.path()).unwrap().verify(None).unwrap();
    assert_eq!(again.len(), m.estimates.len());
    for (r, e) in again.iter().zip(&m.estimates) {
        assert_eq!((r.id.name(), r.constant), (e.id.as_str(), e.constant));
    }
}

#[test]
fn retention_sweep_writes_three_runs_and_a_curve() {
    let dir = tempfile::tempdir().unwrap();
    let base = r#"
        name = "ret"
        equation = "pme"
        domain = { lower = [-1.0, -1.0], upper = [1.0, 1.0], horizon = 0.04 }
        grid = { cells_per_axis = [40, 40], time_steps = 20 }
        [solver]
        m = 2.0
        q = 4.0
        [initial]
        atoms = [{ x = [0.0, 0.0], mass = 1.0 }]
        [outputs]
        potentials = false
    "#;
    fs::write(dir.path().join("base.toml"), base).unwrap();
    fs::write(
        dir.path().join("sweep.toml"),
        "kind = \"retention\"\nscenario = \"base.toml\"\nscales = [0.4, 0.2, 0.1]\nt_probe = 0.02\n",
    )
    .unwrap();
    let doc = read_sweep(&dir.path().join("sweep.toml")).unwrap();
    let out = dir.path().join("out");
    let outcome = run_sweep_doc(&doc, &out, 2).unwrap();
    assert_eq!(outcome.runs.len(), 3);
    for (i, (run, m)) in outcome.runs.iter().enumerate() {
        assert_eq!(run, &out.join(format!("ret-scale{i}")));
        assert!(run.join("manifest.json").is_file());
        assert_eq!(m.exit_code, 0);
    }
    let mut rdr = csv::Reader::from_path(out.join("retention.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    let retained: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    // supercritical absorption: sharper atoms lose more mass
    assert!(retained.windows(2).all(|w| w[1] < w[0]), "{retained:?}");
    assert!(retained.iter().all(|&r| r > 0.0 && r < 1.0));

    let (report, worst) = dplab_cli::report::report(&out).unwrap();
    assert_eq!((report.len(), worst), (3, 0));
    assert!(out.join("report.csv").is_file());
}
