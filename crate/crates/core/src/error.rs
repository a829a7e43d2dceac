use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// A computed probability left its admissible range by more than the
    /// rounding allowance; this indicates a formula bug, not bad input.
    #[error("internal consistency error in {what}: value {value:e}")]
    Consistency { what: String, value: f64 },

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("fock truncation too coarse: norm deficit {deficit:e} exceeds bound {bound:e}")]
    Truncation { deficit: f64, bound: f64 },
}

impl ModelError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ModelError::InvalidParameter { field, reason: reason.into() }
    }

    pub(crate) fn consistency(what: impl Into<String>, value: f64) -> Self {
        ModelError::Consistency { what: what.into(), value }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
