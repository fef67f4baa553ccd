use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated an operation precondition (dimensions, missing variables, bad settings).
    #[error("usage error: {0}")]
    Usage(String),

    /// A model invariant failed; `field` names the offending part of the model.
    #[error("validation failed for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    /// Syntax error in an expression or description file.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Expression evaluated outside its domain (e.g. division by zero).
    #[error("evaluation error: {0}")]
    Eval(String),

    /// The semidefinite program has no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The conic solver stopped without a usable answer.
    #[error("solver failure: {0}")]
    Solver(String),

    /// Controller recovery refused an ill-conditioned slack matrix.
    #[error("controller recovery failed: {0}")]
    Recovery(String),

    /// The simulated plant left its admissible model class.
    #[error("model violation: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Validation { field: field.into(), reason: reason.into() }
}

impl Error {
    /// Process exit status: 2 for input problems, 3 for infeasibility, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) => 3,
            Error::Solver(_) | Error::Recovery(_) => 4,
            Error::Usage(_)
            | Error::Validation { .. }
            | Error::Parse { .. }
            | Error::Eval(_)
            | Error::Model(_)
            | Error::Io(_) => 2,
        }
    }
}
