//! Multilayer perceptrons with reverse-mode gradients, the Adam optimizer,
//! and the loss gradient path through the mini-batch energy distance.

mod adam;
mod envelope;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState, Direction};
pub use envelope::{loss_gradients, LossGradients, LossInputs};
pub use mlp::{init_mlp, Gradients, InitScheme, Linear, Mlp, OutputHead, Tape};
