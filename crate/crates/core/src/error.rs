use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by model construction, sampling, and run I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config field `{field}`: {constraint}")]
    Config { field: String, constraint: String },
    #[error("matrix `{matrix}` is not positive definite (eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { matrix: String, eigenvalue: f64 },
    #[error("data: {0}")]
    Data(String),
    #[error("day {day} is outside 1..={len}")]
    DayOutOfRange { day: usize, len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("all particle weights are zero at day {day}")]
    DegenerateWeights { day: usize },
    #[error("day {day} has a missing outcome; the marginal filter requires complete data")]
    MissingOutcome { day: usize },
    #[error("Pitman-Yor cap of {cap} occupied clusters exceeded")]
    ClusterCapExceeded { cap: usize },
    #[error("runtime: {0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            constraint: constraint.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::NotPositiveDefinite { .. } | Error::Json(_) => 2,
            Error::Data(_) | Error::DayOutOfRange { .. } | Error::Csv(_) | Error::MissingOutcome { .. } => 3,
            _ => 4,
        }
    }
}
