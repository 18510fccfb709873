use bvfield::FieldError;
use thiserror::Error;

/// Failure of a CLI run, carrying its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Field(FieldError),
    #[error("fit did not converge within {0} evaluations (best point written)")]
    NotConverged(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Field(e) if e.is_input_error() => 2,
            CliError::Field(_) => 3,
            CliError::NotConverged(_) => 4,
        }
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        CliError::Field(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
