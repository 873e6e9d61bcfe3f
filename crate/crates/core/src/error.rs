use thiserror::Error;

use crate::sns::LorentzianFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("value {value} outside valid range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("numerical failure at step {step}: {reason}")]
    NumericalFailure { step: usize, reason: String },

    #[error("lorentzian fit did not converge after {iterations} iterations")]
    FitDiverged {
        iterations: usize,
        last: Box<LorentzianFit>,
    },

    #[error("schema error at line {line}: {reason}")]
    Schema { line: u64, reason: String },

    #[error("non-uniform sampling at line {line}: step {step} s deviates from median {median} s")]
    NonUniformSampling { line: u64, step: f64, median: f64 },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable identifier used in machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidCovariance(_) => "InvalidCovariance",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::NumericalFailure { .. } => "NumericalFailure",
            Error::FitDiverged { .. } => "FitDiverged",
            Error::Schema { .. } => "SchemaError",
            Error::NonUniformSampling { .. } => "NonUniformSampling",
            Error::Parse { .. } => "ParseError",
            Error::Io(_) => "Io",
            Error::Config(_) => "ConfigError",
            Error::Csv(_) => "CsvError",
        }
    }

    /// Line number for file-backed errors.
    pub fn line(&self) -> Option<u64> {
        match self {
            Error::Schema { line, .. }
            | Error::NonUniformSampling { line, .. }
            | Error::Parse { line, .. } => Some(*line),
            _ => None,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
