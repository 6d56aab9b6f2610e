//! Minimal dense tensors with reverse-mode automatic differentiation and
//! the layer set used by the classifiers.

mod adam;
mod basic;
mod conv;
pub mod gradcheck;
mod graph;
mod gru;
mod loss;
mod norm;
mod pool;
mod real;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, Mode, Var};
pub use gru::GruParams;
pub use loss::PRED_FLOOR;
pub use norm::{BnStats, BN_EPSILON, BN_MOMENTUM};
pub use real::Real;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("loss error: {0}")]
    Loss(String),
}
