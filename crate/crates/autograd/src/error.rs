use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutogradError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("index {index} out of range for {op} with size {size}")]
    Index {
        op: &'static str,
        index: usize,
        size: usize,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward was already run on this tape")]
    AlreadyBackpropagated,

    #[error("non-finite gradient for parameter `{0}`, optimizer step rejected")]
    NonFiniteGradient(String),

    #[error("optimizer state does not match parameters: {0}")]
    StateMismatch(String),
}

pub type Result<T> = std::result::Result<T, AutogradError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(AutogradError::Shape {
        op,
        detail: detail.into(),
    })
}
