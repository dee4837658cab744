use thiserror::Error;

/// Errors raised by the engine.
///
/// Variants split into input problems ([`Error::is_validation`]) and numerical
/// breakdowns, which the CLI maps to distinct exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("negative intensity at ({row}, {col}): {value}")]
    NegativeIntensity { row: usize, col: usize, value: f64 },
    #[error("state {0} has zero exit rate")]
    ZeroExitRate(usize),
    #[error("row {row} of D1+D2 sums to {sum}, expected 0")]
    RowSum { row: usize, sum: f64 },
    #[error("embedded chain is reducible")]
    Reducible,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model is unstable (margin {margin:.6e}, load {load:.6})")]
    Unstable { margin: f64, load: f64 },
    #[error("state count {n} exceeds the cap {cap}")]
    TooManyStates { n: usize, cap: usize },
    #[error("matrix is numerically singular")]
    Singular,
    #[error("root finding failed: {0}")]
    Roots(String),
    #[error("expected {expected} roots with nonnegative real part, found {found}")]
    RootCount { expected: usize, found: usize },
    #[error("repeated root with positive real part near {0}")]
    RepeatedRoot(String),
    #[error("common factor cancellation failed: {0}")]
    Cancellation(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("inversion failed: {0}")]
    Inversion(String),
    #[error("consistency check failed: {0}")]
    Consistency(String),
}

impl Error {
    /// True for errors caused by the input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::NegativeIntensity { .. }
                | Error::ZeroExitRate(_)
                | Error::RowSum { .. }
                | Error::Reducible
                | Error::InvalidParameter(_)
                | Error::Unstable { .. }
                | Error::TooManyStates { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
