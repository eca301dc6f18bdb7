//! Minimal trainable network kernel: dense and convolutional layers,
//! activations, dropout, BCE/MSE losses, and Adam.

mod adam;
pub mod checkpoint;
mod layer;
mod loss;
mod network;

pub use adam::{adam_step, AdamState};
pub use layer::{sigmoid, Activation, Layer};
pub use loss::{bce_loss, mse_loss, BCE_EPSILON};
pub use network::{Gradients, Mode, Network, Tape};
