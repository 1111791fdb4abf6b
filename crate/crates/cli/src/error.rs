use std::path::PathBuf;

use thiserror::Error;

/// Failures of a CLI run, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("inference degenerated: {0}")]
    Degeneracy(dpmss::Error),

    #[error("{0}")]
    Inference(dpmss::Error),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl CliError {
    /// Process exit status: 2 config, 3 data, 4 degeneracy, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Degeneracy(_) => 4,
            CliError::Inference(_) | CliError::Io { .. } | CliError::Output { .. } => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CliError::Output {
            path: path.into(),
            message: err.to_string(),
        }
    }
}

impl From<dpmss::Error> for CliError {
    fn from(e: dpmss::Error) -> Self {
        use dpmss::Error as E;
        match e {
            E::ParticleDegeneracy { .. }
            | E::SingularInnovation { .. }
            | E::SingularObservationNoise { .. }
            | E::DegenerateDensity => CliError::Degeneracy(e),
            E::InvalidParameter(m) => CliError::Config(m),
            E::DimensionMismatch { .. } => CliError::Config(e.to_string()),
            E::InsufficientHistory { .. } | E::EmptyTrace => CliError::Inference(e),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
