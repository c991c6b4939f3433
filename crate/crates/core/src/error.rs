//! Library-wide error type.

/// Errors reported by the estimation and evaluation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A latitude or longitude was non-finite or out of range.
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),

    /// A job record violated a field invariant.
    #[error("invalid record: {0}")]
    InvalidRecord(String),

    /// Two records in one dataset share an id.
    #[error("duplicate job id {0}")]
    DuplicateId(u64),

    /// The input could not be parsed at all (bad header, unreadable stream).
    #[error("malformed input: {0}")]
    MalformedInput(String),

    /// A load quantity could not be converted to container units.
    #[error("uncodable load: {0}")]
    UncodableLoad(String),

    /// A candidate pool was empty where at least one job is required.
    #[error("empty candidate pool")]
    EmptyPool,

    /// A caller-supplied parameter was out of its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An objective function produced NaN or -inf (the +inf sentinel is allowed).
    #[error("objective returned a non-finite value (NaN or -inf)")]
    NonFiniteObjective,

    /// Not enough observations for the requested statistic or fit.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// No arm of a combination produced a usable estimate.
    #[error("no valid estimate to combine")]
    NoValidEstimate,

    /// Two reports that must describe the same jobs do not.
    #[error("mismatched reports: {0}")]
    MismatchedReports(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
