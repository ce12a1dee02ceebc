use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A cell could not be parsed. `row` is the 1-based line number in the file.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("malformed input: {0}")]
    Structure(String),

    #[error("invalid transform code {code} for series {series} (expected 1..=7)")]
    InvalidTcode { series: String, code: i64 },

    #[error("domain error at index {index}: {message}")]
    Domain { index: usize, message: String },

    #[error("series {series} has zero variance and cannot be standardized")]
    ZeroVariance { series: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient observations: need at least {needed}, have {available}")]
    InsufficientObservations { needed: usize, available: usize },

    #[error("filter failure at t={t}: {reason}")]
    FilterFailure { t: usize, reason: String },

    #[error("rank-deficient normal equations: {0}")]
    RankDeficient(String),

    #[error("degenerate model pool: {0}")]
    DegeneratePool(String),

    #[error("pool collapse at t={t}: every model has zero predictive likelihood")]
    PoolCollapse { t: usize },

    #[error("stationarity guard violated: companion spectral radius {radius:.6} >= {limit}")]
    Stationarity { radius: f64, limit: f64 },

    #[error("empty record set")]
    EmptyRecords,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than a numerical or
    /// runtime failure. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Structure(_)
                | Error::InvalidTcode { .. }
                | Error::Domain { .. }
                | Error::ZeroVariance { .. }
                | Error::Dimension(_)
                | Error::InvalidParameter(_)
                | Error::InsufficientObservations { .. }
                | Error::Stationarity { .. }
                | Error::EmptyRecords
        )
    }
}
