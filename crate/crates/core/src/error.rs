use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("{0}")]
    Format(String),

    #[error("duplicate constituent name `{0}`")]
    DuplicateName(String),

    #[error("constituent `{name}` has non-positive speed {speed}")]
    InvalidSpeed { name: String, speed: f64 },

    #[error("invalid nodal factor {factor} for constituent index {index}")]
    InvalidNodalFactor { index: usize, factor: f64 },

    #[error("unknown constituent `{0}`")]
    NotFound(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("invalid sampling plan: {0}")]
    InvalidPlan(String),

    #[error("sampling window selected no samples")]
    EmptySelection,

    #[error("reference amplitudes are missing")]
    MissingPrior,

    #[error("reference harmonics are not aligned: {0}")]
    Alignment(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
