use alloc::string::String;

/// Errors raised by the core routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Array, grid and tensor dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    /// A numerical routine (factorization, solver) failed.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A model output violated an invariant it is built to satisfy.
    #[error("internal consistency: {0}")]
    Consistency(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

pub(crate) use invalid;
