//! Library side of the `mspa` command-line tool: CSV tables, data
//! generation, evaluation and parameter sweeps.

pub mod ensemble;
pub mod eval;
pub mod generate;
pub mod sweep;
pub mod table;

use std::path::PathBuf;

/// Failure of a command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Numerical(#[from] mspa::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self::Parse { path: path.into(), message: message.to_string() }
    }

    /// 1 for bad input of any kind, 2 when the numerics fail on valid input.
    pub fn exit_code(&self) -> i32 {
        use mspa::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Parse { .. } => 1,
            CliError::Numerical(e) => match e {
                E::Dimension(_) | E::InvalidInput(_) | E::InsufficientData(_) | E::Format(_) => 1,
                E::DegeneratePolytope(_) | E::NoConvergence { .. } | E::Diverged { .. } | E::NotApplicable(_) => 2,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
