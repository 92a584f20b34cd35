use crate::solver::SolverStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A file or stream could not be parsed (CSV, JSON, TOML).
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// The embedded solver stopped without an optimal certificate.
    #[error("solver stopped with status {status:?}: {detail}")]
    Solver { status: SolverStatus, detail: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    /// Short machine-readable tag used in CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Solver { .. } => "solver",
        }
    }

    /// Process exit code for the CLI; nonzero and stable per category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) => 2,
            Error::Parse(_) => 3,
            Error::Io(_) => 4,
            Error::Solver { .. } => 5,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(format!("json: {e}"))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(format!("csv: {e}"))
    }
}
