use thiserror::Error;

/// Errors raised anywhere in the field-modelling pipeline.
///
/// The variants are grouped by who is at fault: `Domain`, `Conflict` and
/// `Config` point at bad inputs, `Model` at an operator that violates its
/// ellipticity/positivity assumptions, and `Numeric`/`Degenerate` at a
/// factorization that broke down.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate constraints: {0}")]
    Degenerate(String),
}

impl FieldError {
    /// True for errors caused by malformed or inconsistent inputs.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            FieldError::Domain(_) | FieldError::Conflict(_) | FieldError::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, FieldError>;
