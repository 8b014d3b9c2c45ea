//! Reverse-mode differentiation engine.
//!
//! A [`Graph`] is a tape of eagerly evaluated ops over [`Tensor`]s. The set
//! of ops is the small closed set the depth pipeline needs, plus a few fused
//! helpers (batch normalization, pose matrices, depth projection).

mod graph;
mod kernels;
pub mod gradcheck;
pub mod optim;
mod params;
mod scalar;
mod tensor;

pub use graph::{
    BatchStats, Gradients, Graph, KinkSignature, NormMode, ProjectionParams, Var,
};
pub use params::{GroupName, NamedTensors, ParameterGroup};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub(crate) use kernels::rodrigues;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("graph already differentiated; run a new forward pass")]
    Consumed,
    #[error("no gradient for tensor {0}")]
    MissingGradient(String),
    #[error("unknown tensor {0}")]
    UnknownTensor(String),
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
    #[error("optimizer step counter overflow")]
    StepOverflow,
}
