use thiserror::Error;

/// Errors raised by the optimization library.
#[derive(Debug, Error)]
pub enum Error {
    /// A point or arm lies outside the kernel's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data cannot define a valid kernel or objective (e.g. zero variance).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A numerical routine broke down (Cholesky pivot, NaN score, root finder).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Invalid parameters or configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data (CSV cells, sample counts).
    #[error("invalid input: {0}")]
    Input(String),

    /// More trials aborted than an experiment tolerates.
    #[error("{aborted} of {total} trials aborted (first failure: {first})")]
    TrialsAborted {
        aborted: usize,
        total: usize,
        first: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
