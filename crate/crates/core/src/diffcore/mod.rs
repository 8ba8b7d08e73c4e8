//! Minimal dense-tensor reverse-mode differentiation: exactly the operations
//! the diffusion-unit network needs, plus optimizers, the loss, and parameter
//! checkpointing. Double precision throughout.

pub mod checkpoint;
mod graph;
mod layers;
mod params;
mod tensor;

pub mod optim;

pub use graph::{BnState, Gradients, Graph, Mode, Var};
pub use layers::{BatchNormLayer, LinearLayer, LinearInit, Mlp, BN_EPS, BN_MOMENTUM};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tensor::Tensor;
