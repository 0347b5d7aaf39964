use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The balance equations did not have a unique solution.
    #[error("singular balance system ({states} states): {detail}")]
    Singular { states: usize, detail: String },

    /// No configuration satisfies the QoS or budget constraints.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A scenario file failed to load or validate. `path` is the field path
    /// (for example `stations[2].charge_rate`) or the file location.
    #[error("scenario error at {path}: {message}")]
    Scenario { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn scenario(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scenario {
            path: path.into(),
            message: message.into(),
        }
    }
}
