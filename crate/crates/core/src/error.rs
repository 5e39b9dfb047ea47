use std::path::PathBuf;

use crate::model::ModelVariant;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("component {component} is empty (effective size {weight:.3e})")]
    EmptyComponent { component: usize, weight: f64 },

    #[error("all {attempts} attempts failed for cell variant={variant} K={k} L={l:?}")]
    FitFailure {
        variant: ModelVariant,
        k: usize,
        l: Vec<usize>,
        attempts: usize,
    },

    #[error("model selection failed: {0}")]
    SelectionFailure(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("column `{0}` has zero variance and cannot be standardized")]
    ConstantColumn(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    /// Stable machine-readable category, used by the CLI for exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::InvalidInput(_) => "invalid-input",
            Error::Numerical(_) => "numerical",
            Error::EmptyComponent { .. } => "empty-component",
            Error::FitFailure { .. } => "fit-failure",
            Error::SelectionFailure(_) => "selection-failure",
            Error::Parse { .. } => "parse",
            Error::ConstantColumn(_) => "constant-column",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
