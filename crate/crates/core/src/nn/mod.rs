//! Dense numeric core: matrices, LSTM and fully connected layers, inverted
//! dropout, MSE loss with hand-written reverse-mode gradients, Adam and a
//! step-decay learning rate schedule.
//!
//! Everything is `f64` and single-threaded, so a seeded run is bit-reproducible.

mod adam;
mod dense;
mod dropout;
pub mod gradcheck;
mod loss;
mod lstm;
mod matrix;
mod network;
mod schedule;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::Dense;
pub use dropout::{dropout_apply, DropoutMask};
pub use loss::{mse, mse_grad};
pub use lstm::{lstm_forward, LstmCache, LstmGrads, LstmLayer};
pub use matrix::{axpy, dot, Matrix};
pub use network::{time_major, ArchitectureSpec, BatchMasks, Gradients, Network, SampleMasks, INPUT_CHANNELS};
pub use schedule::{lr_schedule, StepDecay};
