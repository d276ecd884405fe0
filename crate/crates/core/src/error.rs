use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer {index} ({kind}): {message}")]
    Layer {
        index: usize,
        kind: &'static str,
        message: String,
    },

    #[error("invalid camera: {0}")]
    Camera(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular 2D covariance for gaussian {0}")]
    SingularCovariance(usize),

    #[error("loss is not a scalar (shape {0:?})")]
    NonScalarLoss(alloc::vec::Vec<usize>),

    #[error("variable does not belong to this tape")]
    ForeignVariable,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("insufficient capacity: need {needed} bits, cover holds {available}")]
    Capacity { needed: usize, available: usize },

    #[error("no payload found: {0}")]
    NoPayload(&'static str),
}
