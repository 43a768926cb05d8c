use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
///
/// The variants separate problems the user can fix by changing inputs or
/// flags (`Config`, `Parse`) from problems that arise while estimating
/// (`Estimation`, `Numerical`).
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad flag values, missing columns, malformed
    /// term descriptors, under-identification.
    #[error("configuration error: {0}")]
    Config(String),

    /// A data cell failed to parse as a finite real number.
    #[error("parse error at row {row}, column '{column}': {detail}")]
    Parse {
        row: usize,
        column: String,
        detail: String,
    },

    /// The estimator could not produce a result on the given data
    /// (rank deficiency, empty cells, all nodes singular, ...).
    #[error("estimation error: {0}")]
    Estimation(String),

    /// A numerical routine failed to converge or meet its certificate.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
