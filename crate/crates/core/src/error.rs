use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A structural invariant of a domain value does not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("malformed record: {0}")]
    Format(String),
    #[error("template error: {0}")]
    Template(String),
    /// The critic could not produce a usable verdict; the trajectory is
    /// excluded from synthesis.
    #[error("relabel error: {0}")]
    Relabel(String),
    /// Transport to a remote critic failed after retries.
    #[error("backend error: {0}")]
    Backend(String),
    /// The offline oracle cannot interpret a free-form correction.
    #[error("oracle cannot interpret correction: {0}")]
    Oracle(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("training diverged at update {update}: {reason}")]
    Diverged {
        update: usize,
        reason: String,
        /// Parameters from the last update with a finite loss.
        last_finite: Box<crate::learner::PolicyParams>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
