use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value outside its mathematical domain (e.g. latitude of 91°).
    #[error("input out of domain: {0}")]
    Domain(String),

    #[error("ingestion failed at row {row}: {message}")]
    IngestRow { row: usize, message: String },

    #[error("ingestion failed: {0}")]
    Ingest(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("only {rows} aligned rows between leader and follower logs (need at least {needed})")]
    InsufficientOverlap { rows: usize, needed: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("time index {t} is not past the lag order {lags}")]
    Index { t: usize, lags: usize },

    #[error("covariance of regime {regime} is not positive definite")]
    NotPositiveDefinite { regime: usize },

    #[error("all regime densities underflow at t = {t}")]
    Underflow { t: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("simulation diverged at step {step}; check the companion spectral radius of each regime")]
    Unstable { step: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Underflow { .. }
                | Error::NonFinite(_)
                | Error::Unstable { .. }
        )
    }
}
