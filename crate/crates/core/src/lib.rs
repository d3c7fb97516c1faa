//! Short-horizon heave forecasting for a floating platform.
//!
//! The crate covers the whole pipeline: JONSWAP wave synthesis ([`wave`]), a
//! synthetic platform response used as ground truth ([`oracle`]), windowed
//! and normalized training pairs ([`dataset`]), a small hand-differentiated
//! LSTM network ([`nn`]), training with k-fold cross-validation and
//! checkpoints ([`forecaster`]) and Monte-Carlo dropout uncertainty with
//! covariance diagnostics ([`uncertainty`]).

pub mod dataset;
pub mod error;
pub mod forecaster;
pub mod nn;
pub mod oracle;
pub mod record;
pub mod rng;
pub mod uncertainty;
pub mod wave;

pub use error::{Error, ErrorKind, Result};
pub use record::TimeSeriesRecord;
