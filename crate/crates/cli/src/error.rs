use std::path::PathBuf;

use thiserror::Error;

/// Process exit status for each error class.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<paramp::Error> for CliError {
    fn from(e: paramp::Error) -> Self {
        use paramp::Error as E;
        match e {
            E::Domain(_) | E::DimensionMismatch { .. } | E::GridMismatch { .. } | E::Format(_) => {
                CliError::Config(e.to_string())
            }
            E::NumericDegeneracy(_) | E::InsufficientData(_) | E::NonFinite(_) => {
                CliError::Numeric(e.to_string())
            }
            E::Io(source) => CliError::Io {
                path: PathBuf::from("<stream>"),
                source,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
