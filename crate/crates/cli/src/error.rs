use ghmm::GhmmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("numerical failure: {0}")]
    Numerical(GhmmError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Validation-type library errors become `Validation` at `path`; the rest are numerical.
    pub fn from_ghmm(e: GhmmError, path: &str) -> Self {
        use GhmmError::*;
        match e.root() {
            InvalidParameter { .. }
            | NonstationaryParameters { .. }
            | InvalidStochasticMatrix(_)
            | DimensionMismatch(_)
            | UnsupportedOrder { .. }
            | TooLarge { .. }
            | TooShort { .. }
            | StateSpaceTooLarge(_)
            | SizeCap { .. }
            | EmptySequence
            | InvalidArgument(_)
            | Config { .. } => CliError::Validation {
                path: path.to_string(),
                message: e.to_string(),
            },
            _ => CliError::Numerical(e),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

pub trait Context<T> {
    /// Classifies a library error, attributing validation failures to `path`.
    fn at(self, path: &str) -> Result<T, CliError>;
}

impl<T> Context<T> for Result<T, GhmmError> {
    fn at(self, path: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::from_ghmm(e, path))
    }
}
