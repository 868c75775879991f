//! Minimal double-precision neural network engine: valid stride-1
//! convolutions, dense layers, ReLU/sigmoid, global average pooling and
//! reverse-mode gradients for parameters and every intermediate activation.

mod layer;
mod loss;
mod net;
mod optim;
mod params;

pub use layer::LayerSpec;
pub use loss::{softmax_cross_entropy, squared_error};
pub use net::{ClassifierArch, ClassifierNet, Forward, GradientTape, Net, Sequential};
pub use optim::{adam_step, sgd_step, sgd_step_in_place, AdamConfig, AdamState};
pub use params::{param_count, ModelParams};
