//! Surrogate-gradient machinery: input relaxation, taped forward pass,
//! backward pass to the input and weights, Adam, and a small trainer.

mod adam;
mod gumbel;
mod tape;
mod train;

pub use adam::AdamState;
pub use gumbel::{
    gumbel_pair, gumbel_pair_grad, gumbel_softmax, gumbel_softmax_seeded, ste_binarize, GumbelNoise,
    SoftInput,
};
pub use tape::{
    backward_to_input, forward_with_tape, forward_with_tape_soft, Tape, DEFAULT_SURROGATE_BETA,
};
pub use train::{init_weights, toy_template, train_toy, train_toy_with, TrainConfig};
