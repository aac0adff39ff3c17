//! Error type shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Geometry parameters that cannot describe a scan (zero sizes, empty angle list, ...).
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    /// Block partition that does not tile the system matrix as required.
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    /// Operand shapes that do not match the operator.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Solver or tuning parameters outside their admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Configuration file problems, with the offending line when known.
    #[error("config error: {0}")]
    Config(String),

    /// Array file format violations (bad header, truncated payload, ...).
    #[error("array format error: {0}")]
    ArrayFormat(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
