use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("dimension mismatch: expected length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("domain of length {length} km is shorter than the required {required} km")]
    DomainTooSmall { length: f64, required: f64 },

    #[error("mesh: {0}")]
    Mesh(String),

    #[error(
        "Chebyshev iteration did not reach tolerance {target_tol} within {cap} iterations \
         (eigenvalue bounds [{lambda_min}, {lambda_max}], last residual {residual})"
    )]
    CalibrationFailed {
        cap: usize,
        target_tol: f64,
        lambda_min: f64,
        lambda_max: f64,
        residual: f64,
    },

    #[error("non-positive diagonal estimate {value} of the diffusion operator at node {index}")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("observation input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Errors caused by bad user input rather than by a numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::DimensionMismatch { .. }
                | Error::DomainTooSmall { .. }
                | Error::Mesh(_)
                | Error::Config(_)
                | Error::Input(_)
                | Error::Csv(_)
        )
    }
}

pub(crate) fn check_len(v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}
