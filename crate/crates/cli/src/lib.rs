//! Scenario files, run directories, sweeps and reports for the `dplab` binary.

pub mod error;
pub mod jobs;
pub mod report;
pub mod run;
pub mod scenario;
pub mod sweep;

pub use error::{CliError, CliResult};
pub use run::{run_scenario, Manifest, SavedRun};
pub use scenario::{parse_scenario, read_scenario, EquationKind, Scenario};
