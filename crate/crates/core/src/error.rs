use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A model or policy failed validation.  The message names the first
    /// offending field, e.g. `trans[3][1] sums to 0.97`.
    #[error("{0}")]
    Invalid(String),

    /// Two pieces of data (policy vs. history, dataset vs. target, ...) have
    /// incompatible dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An estimator was asked to evaluate an empty dataset.
    #[error("empty dataset: estimators are undefined for n = 0")]
    EmptyDataset,

    /// Exhaustive enumeration would exceed the configured cap.
    #[error("world too large to enumerate: {count} {what} exceed the cap of {cap}")]
    TooLarge {
        what: &'static str,
        count: u128,
        cap: u128,
    },

    /// Bad search bracket or tolerance.
    #[error("invalid bracket: {0}")]
    InvalidBracket(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed serialized data; `where_` names the file/line/field.
    #[error("parse error in {where_}: {msg}")]
    Parse { where_: String, msg: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
