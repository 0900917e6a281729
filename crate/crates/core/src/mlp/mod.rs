//! Bias-free MLPs: activations, losses, forward pass and backpropagation.

mod activation;
mod network;

pub use activation::{Activation, ActivationBounds};
pub(crate) use network::{chain_backward, chain_forward};
pub use network::{loss_cross_entropy, loss_squared, two_layer_gradient, ForwardCache, LossKind, MlpParams, Mode};
