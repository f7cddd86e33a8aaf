use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (exit code 2).
    #[error("configuration error: {0}")]
    Config(String),
    /// Input data failing validation, or missing input files (exit code 3).
    #[error("data error: {0}")]
    Data(String),
    /// Numerical failure: non-finite likelihood, singular curvature, failed fits (exit code 4).
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Invalid bootstrap plan.
    #[error("plan error: {0}")]
    Plan(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// The message without its category prefix.
    pub fn message(&self) -> String {
        match self {
            Error::Config(m) | Error::Data(m) | Error::Numeric(m) | Error::Domain(m) | Error::Plan(m) => m.clone(),
            Error::Io { .. } => self.to_string(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Plan(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numeric(_) | Error::Domain(_) => 4,
        }
    }
}
