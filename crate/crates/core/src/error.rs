use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's contract (bad shape, bad mode, bad parameter).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) | Error::Config(_) => 2,
            Error::DegenerateDataset(_) | Error::Format(_) | Error::Io(_) | Error::Json(_) => 3,
            Error::Numeric(_) | Error::Invariant(_) => 4,
        }
    }
}
