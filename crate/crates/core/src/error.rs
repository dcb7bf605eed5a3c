use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("index {index} out of range (size {size})")]
    OutOfRange { index: usize, size: usize },

    #[error("configuration with {total} excitations exceeds the cap (< {cap})")]
    ExceedsCap { total: u32, cap: u32 },

    #[error("site is not part of the lattice")]
    UnknownSite,

    #[error("integer overflow while counting states")]
    Overflow,

    #[error("displaced state loses {loss:.3e} of its mass to truncation (limit {limit:.1e})")]
    TruncationLoss { loss: f64, limit: f64 },

    #[error("operator is not Hermitian")]
    NotHermitian,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("eigen certificate failed: residual {residual:.3e}, gram deviation {gram:.3e}")]
    Certificate { residual: f64, gram: f64 },

    #[error("solver did not converge: relative residual {residual:.3e}")]
    NoConvergence { residual: f64 },

    #[error("range family is not orthonormal (deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },

    #[error("regression is rank deficient: {0}")]
    RankDeficient(String),

    #[error("contour passes within {distance:.3e} of an eigenvalue")]
    ContourHitsSpectrum { distance: f64 },

    #[error("splitting infeasible: removing {removed:.3e} of mass exceeds the budget {budget:.3e}")]
    InfeasibleSplit {
        removed: f64,
        budget: f64,
        /// (removed mass, worst constant of the remainder) after each greedy step.
        frontier: Vec<(f64, f64)>,
    },

    #[error("time average has an imaginary residue of {0:.3e}")]
    ImaginaryResidue(f64),

    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
