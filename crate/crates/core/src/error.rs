use alloc::string::String;

/// Errors produced anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backtracking on {block} failed to majorize after {iters} growth steps")]
    Divergence { block: &'static str, iters: usize },
    #[error("objective became non-finite at epoch {epoch}")]
    ObjectiveDiverged { epoch: usize },
    #[error("zero secant vector")]
    DegenerateSecant,
    #[error("inverse-Jacobian update denominator {0:e} underflowed")]
    NumericalBreakdown(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("split leaves one side empty")]
    EmptySplit,
}

pub type Result<T> = core::result::Result<T, Error>;
