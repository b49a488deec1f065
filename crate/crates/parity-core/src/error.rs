//! Crate-wide error type.

/// Errors surfaced by every module of the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input file content (CSV row, JSON document, log line).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input violates a documented invariant (non-positive price, weights
    /// not summing to one, bad configuration value, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Structurally valid data that cannot be used (gap too large,
    /// requested range not covered, misaligned series).
    #[error("data error: {0}")]
    Data(String),

    /// Not enough history for the requested computation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// An asset makes the requested statistic undefined.
    #[error("degenerate asset {asset}: {msg}")]
    DegenerateAsset { asset: String, msg: String },

    #[error("covariance too ill-conditioned: condition number {cond:.3e} exceeds bound {bound:.3e}")]
    Conditioning { cond: f64, bound: f64 },

    #[error("degenerate frontier: {0}")]
    DegenerateFrontier(String),

    #[error("solver did not converge: {0}")]
    Convergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 2 for data/parse/io problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Data(_) | Error::InsufficientData(_) | Error::Io(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
