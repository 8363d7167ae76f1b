use thiserror::Error;

/// Errors surfaced by the simulator, its stores and the scenario loader.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown table `{0}`")]
    UnknownTable(String),

    #[error("unknown region `{0}`")]
    UnknownRegion(String),

    /// A list was popped while empty. The distributor only pops transactions
    /// it has verified, so this always indicates a protocol bug.
    #[error("pop_front on empty list `{field}` of `{key}`")]
    EmptyListPop { key: String, field: String },

    #[error("field `{field}` of `{key}` has the wrong type")]
    TypeMismatch { key: String, field: String },

    #[error("invalid scenario at `{path}`: {reason}")]
    Scenario { path: String, reason: String },

    #[error("simulation exceeded {0} events without reaching quiescence")]
    NonTermination(u64),

    #[error("invalid cost parameters: {0}")]
    Cost(String),

    #[error("malformed trace line {line}: {reason}")]
    Trace { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn scenario(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Scenario {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
