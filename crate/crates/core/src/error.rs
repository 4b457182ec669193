//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("{0}")]
    Invalid(String),

    #[error("backward already run on this tape")]
    BackwardTwice,

    #[error("backward requires a scalar loss, got {0}x{1}")]
    NonScalarLoss(usize, usize),

    #[error("eigensolver did not converge within {0} sweeps")]
    EighNoConvergence(usize),

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    Asymmetric(f64),

    #[error("empty mask: {0}")]
    EmptyMask(&'static str),

    #[error("class {class} has no nodes on the {side} side")]
    EmptyClass { class: usize, side: &'static str },

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset format error: {0}")]
    Format(String),

    #[error("linear system is singular")]
    Singular,

    #[error("condensation failed at epoch {epoch} ({records} validation records so far): {source}")]
    Condensation {
        epoch: usize,
        records: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit code for the CLI: 2 for usage/config problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}
