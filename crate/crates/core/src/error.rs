//! Error type of the quantization core.

use alloc::string::String;

/// Errors produced by the quantization core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Two shapes that must agree do not.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    /// An operation that needs at least one vector received none.
    #[error("empty input")]
    EmptyInput,
    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value at index {0}")]
    NonFiniteValue(usize),
    /// A configuration value is outside its allowed range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// The Gram matrix could not be inverted, even after ridge regularization.
    #[error("gram matrix is singular")]
    SingularGram,
    /// The calibration Gram matrix is zero (or otherwise unusable).
    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),
    /// Codes or codebooks of a quantized layer are inconsistent with its header.
    #[error("corrupt code stream: {0}")]
    CorruptCodeStream(String),
}

/// Result alias for this crate.
pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::DimMismatch(alloc::format!($($arg)*))
    };
}
pub(crate) use dim_err;
