use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the calibration toolkit.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A graph node was evaluated outside the domain of its operation.
    #[error("domain error at node {node}: {what}")]
    Domain { node: usize, what: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid example {query_id}: {reason}")]
    InvalidExample { query_id: String, reason: String },

    #[error("k exceeds pool size for query {query_id} (k = {k}, pool = {pool})")]
    KExceedsPool {
        query_id: String,
        k: usize,
        pool: usize,
    },

    #[error("duplicate query id {0}")]
    DuplicateQueryId(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown candidate {0}")]
    UnknownCandidate(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    /// The fitting objective stopped being finite.
    #[error("divergence at iteration {iteration}: objective is not finite")]
    Divergence { iteration: usize },

    #[error("individual scope requires relevance labels")]
    MissingRelevance,

    #[error("method {method} cannot be fitted in scope {scope}")]
    Incompatible {
        method: &'static str,
        scope: &'static str,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
