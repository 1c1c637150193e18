//! Error type shared by all modules of the crate.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs_rows}x{lhs_cols} vs {rhs_rows}x{rhs_cols}")]
    DimensionMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("vector of length {0} cannot be split into real and imaginary halves")]
    OddLength(usize),

    #[error("singular system: pivot {index} vanished during elimination")]
    Singular { index: usize },

    #[error("singular initialization: diagonal entry {index} is zero")]
    SingularInit { index: usize },

    #[error("emulated device crashed at {voltage} V (at or below the crash voltage)")]
    DeviceCrash { voltage: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
