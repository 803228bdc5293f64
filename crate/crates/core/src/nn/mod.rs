//! Dense numeric substrate: matrices, feedforward networks, a reverse-mode
//! tape over the operator set the encoder and losses need, and Adam.

mod adam;
mod checkpoint;
mod ffn;
mod init;
mod matrix;
mod tape;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use ffn::{Activation, Ffn, Linear};
pub use init::{glorot_from_rng, glorot_init};
pub use matrix::DenseMatrix;
pub use tape::{GradStore, Tape, TensorId};
