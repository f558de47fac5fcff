use std::path::PathBuf;

use thiserror::Error;

/// Failures of a CLI invocation, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown key in {path}: {detail}", path = .path.display())]
    UnknownKey { path: PathBuf, detail: String },

    #[error("missing file {path}", path = .path.display())]
    MissingFile { path: PathBuf },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("{failed} check(s) failed: {names}")]
    Verification { failed: usize, names: String },

    #[error("i/o error on {path}: {source}", path = .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification { .. } => 2,
            CliError::Solver(_) => 3,
            CliError::UnknownKey { .. }
            | CliError::MissingFile { .. }
            | CliError::Hypothesis(_)
            | CliError::Config(_) => 4,
            CliError::Io { .. } => 1,
        }
    }

    /// Short machine-readable tag for manifests and reports.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::UnknownKey { .. } => "unknown-key",
            CliError::MissingFile { .. } => "missing-file",
            CliError::Hypothesis(_) => "hypothesis",
            CliError::Config(_) => "config",
            CliError::Solver(_) => "solver",
            CliError::Verification { .. } => "verification",
            CliError::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingFile { path }
        } else {
            CliError::Io { path, source }
        }
    }

    /// Classifies a TOML parse failure; serde reports unknown keys by message only.
    pub fn parse(path: impl Into<PathBuf>, err: &toml::de::Error) -> Self {
        let detail = err.to_string();
        if detail.contains("unknown field") || detail.contains("unknown variant") {
            CliError::UnknownKey {
                path: path.into(),
                detail,
            }
        } else {
            CliError::Config(format!("{}: {detail}", path.into().display()))
        }
    }
}

impl From<dplab_core::Error> for CliError {
    fn from(e: dplab_core::Error) -> Self {
        use dplab_core::Error as E;
        match e {
            E::Hypothesis(m) => CliError::Hypothesis(m),
            E::Solver { step, reason } => CliError::Solver(format!("step {step}: {reason}")),
            E::Io { path, source } => CliError::io(path, source),
            E::Format { path, reason } => {
                if reason.contains("unknown field") {
                    CliError::UnknownKey {
                        path,
                        detail: reason,
                    }
                } else {
                    CliError::Config(format!("{}: {reason}", path.display()))
                }
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
