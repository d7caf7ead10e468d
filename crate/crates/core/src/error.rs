use thiserror::Error;

/// Errors raised anywhere in the simulation, certification and learning stack.
#[derive(Error, Debug)]
pub enum Error {
    /// Pitch too close to the ZYX gimbal-lock singularity.
    #[error("singular attitude: |theta| = {theta:.6} rad is inside the {guard} rad guard band")]
    SingularAttitude { theta: f64, guard: f64 },
    /// The snap inversion cannot be performed at this state.
    #[error("singular inversion: {0}")]
    SingularInversion(String),
    #[error("numerical blowup in simulated state")]
    NumericalBlowup,
    #[error("eigenvalue solver did not converge")]
    EigenFailure,
    #[error("matrix is not Hurwitz: {0}")]
    NotHurwitz(String),
    #[error("no candidate gain passed certification")]
    EmptyLibrary,
    #[error("non-finite TD loss")]
    NonFiniteLoss,
    #[error("parse error: {0}")]
    Parse(String),
    /// A configuration value failed validation; carries the offending field name(s).
    #[error("invalid configuration field `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("index out of range: {index} (library has {len} entries)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
