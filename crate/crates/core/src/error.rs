use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by every module in this crate.
///
/// The variants map onto the CLI exit codes: `Parse` is a usage error (1),
/// `InvalidInput`/`Capacity`/`Io` are data errors (2), and
/// `Contract`/`Numeric` are numeric failures (3).
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor had the wrong shape for an operation. `context` names the
    /// offending tensor or argument.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A class does not hold enough samples for the requested operation.
    #[error("class {class_id} has {available} samples but {required} are required")]
    Capacity {
        class_id: u32,
        available: usize,
        required: usize,
    },

    /// An API contract was violated (e.g. backward on a non-scalar,
    /// an optimizer step with missing gradients).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn dimension(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
