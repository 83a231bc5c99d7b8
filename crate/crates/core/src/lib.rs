//! Non-autoregressive multiresolution imputation of partially observed
//! sequences.
//!
//! A forward and a backward GRU summarize the observed history and future of
//! every step. Missing steps are then filled coarse to fine: the decoder picks
//! two known pivots, predicts a step between them with the head matching the
//! gap scale, updates the affected hidden states, and repeats until nothing is
//! missing.
//!
//! The crate also carries everything around the model: a billiards simulator,
//! mask sampling, MSE and adversarial training, linear and nearest-neighbour
//! baselines, trajectory metrics, and the on-disk formats used by the CLI.

pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod io;
pub mod loss;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod scheduler;
pub mod sequence;
pub mod simulator;
pub mod training;

pub use error::{Error, Result};

/// The single generator type used for all randomness.
pub type Rng = rand_chacha::ChaCha8Rng;
