use thiserror::Error;

/// Errors produced by the pure-computation layer.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    /// A node whose segments are all at maximal depth cannot be split further.
    #[error("node cannot be split: every segment is at maximal cardinality")]
    CannotSplit,
    /// Routing asked for a bit beyond the symbol cardinality.
    #[error("internal error: {0}")]
    Internal(&'static str),
}
