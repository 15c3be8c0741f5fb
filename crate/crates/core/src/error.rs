use thiserror::Error;

/// Errors produced by the field, code, protocol and audit layers.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("modulus {0} is not a prime below 2^16")]
    NotPrime(u32),
    #[error("field parameter mismatch: GF({left}) vs GF({right})")]
    ParamMismatch { left: u16, right: u16 },
    #[error("division by zero in GF({0})")]
    DivisionByZero(u16),
    #[error("index {index} out of range for K = {k}")]
    InvalidIndex { index: usize, k: usize },
    #[error("multiplier at position {0} is zero")]
    InvalidMultiplier(usize),
    #[error("side-information coefficient for index {0} is zero")]
    InvalidCoefficient(usize),
    #[error("model violation: {0}")]
    ModelViolation(String),
    #[error("field GF({q}) too small: {reason}")]
    FieldTooSmall { q: u16, reason: &'static str },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("enumeration of {atoms} atoms exceeds the limit of {limit}")]
    EnumerationTooLarge { atoms: u128, limit: u128 },
    #[error("malformed audit report: {0}")]
    MalformedReport(&'static str),
    #[error("internal invariant violated: {0}")]
    Invariant(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
