//! The trainable network: architecture, parameters, forward/backward pass,
//! optimizers and model distances.

mod arch;
mod network;
mod optim;
mod params;

pub use arch::{Architecture, LayerKind, LayerShape, LayerSpec, Shape3};
pub use network::{
    activation_pattern, argmax, forward, gradient, loss_and_gradient, nll_loss,
};
pub use optim::{OptimizerKind, OptimizerState};
pub use params::{init_params, layer_distance, model_distance, InitMode, LayerParams, ModelParams};
