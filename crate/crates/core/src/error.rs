use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its documented domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A state object violates its invariants (trace, hermiticity, positivity).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A root/bracket search failed; the message carries diagnostics.
    #[error("search failed: {0}")]
    Search(String),

    /// A constrained threshold optimization has no feasible point.
    #[error("constraint infeasible: {0}")]
    Constraint(String),

    /// Calibration could not reach the requested target.
    #[error("calibration failed: {0}")]
    Calibration(String),

    /// A fit did not converge or the data are degenerate for the model.
    #[error("fit failed: {0}")]
    Fit(String),

    /// Too few usable samples after validation/post-selection.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable code, used by CLI error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "DOMAIN",
            Error::InvalidState(_) => "INVALID_STATE",
            Error::Search(_) => "SEARCH_FAILED",
            Error::Constraint(_) => "CONSTRAINT_INFEASIBLE",
            Error::Calibration(_) => "CALIBRATION_FAILED",
            Error::Fit(_) => "FIT_FAILED",
            Error::InsufficientData(_) => "INSUFFICIENT_DATA",
        }
    }
}
