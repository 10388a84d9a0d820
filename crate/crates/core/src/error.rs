use std::fmt;

/// One broken invariant found by a validator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub frame: Option<u32>,
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(frame: Option<u32>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Violation { frame, field: field.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.frame {
            Some(frame) => write!(f, "frame {frame}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// A rejected configuration field.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {}", join(.0))]
    Config(Vec<FieldError>),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("validation failed: {}", join(.0))]
    Validation(Vec<Violation>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(errors: Vec<FieldError>) -> Self {
        Error::Config(errors)
    }

    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema { path: path.into(), message: message.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
