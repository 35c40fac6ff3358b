use std::path::PathBuf;

use nestmdp::{Error, Violation};
use serde::Serialize;
use serde_json::json;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_SHAPE: u8 = 3;
pub const EXIT_PRECONDITION: u8 = 4;
pub const EXIT_NOT_CONVERGED: u8 = 5;
pub const EXIT_IO: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Precondition(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Core(e) => match e {
                Error::InvalidModel(_)
                | Error::InvalidArgument(_)
                | Error::Format(_)
                | Error::IndexOutOfRange { .. } => EXIT_VALIDATION,
                Error::ShapeMismatch(_) => EXIT_SHAPE,
                Error::Precondition(_) => EXIT_PRECONDITION,
                Error::NotConverged { .. } | Error::ConjugateNotConverged { .. } | Error::Numerical(_) => {
                    EXIT_NOT_CONVERGED
                }
            },
            Self::Io { .. } => EXIT_IO,
            Self::Config(_) => EXIT_VALIDATION,
            Self::Precondition(_) => EXIT_PRECONDITION,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Core(e) => match e {
                Error::InvalidModel(_) => "invalid_model",
                Error::IndexOutOfRange { .. } => "index_out_of_range",
                Error::ShapeMismatch(_) => "shape_mismatch",
                Error::NotConverged { .. } => "not_converged",
                Error::ConjugateNotConverged { .. } => "conjugate_not_converged",
                Error::InvalidArgument(_) => "invalid_argument",
                Error::Precondition(_) => "precondition",
                Error::Numerical(_) => "numerical",
                Error::Format(_) => "format",
            },
            Self::Io { .. } => "io",
            Self::Config(_) => "config",
            Self::Precondition(_) => "precondition",
        }
    }

    /// One-line JSON error record.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            exit_code: u8,
            kind: &'a str,
            message: String,
            #[serde(skip_serializing_if = "<[Violation]>::is_empty")]
            violations: &'a [Violation],
        }
        let violations: &[Violation] = match self {
            Self::Core(Error::InvalidModel(v)) => v,
            _ => &[],
        };
        let record = Record {
            exit_code: self.exit_code(),
            kind: self.kind(),
            message: self.to_string(),
            violations,
        };
        json!({ "error": record }).to_string()
    }
}
