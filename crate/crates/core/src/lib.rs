//! Stochastic compression for transformer speech encoders.
//!
//! An encoder can run each forward pass with a different compression
//! configuration: a global squeeze factor on the time axis plus per-layer
//! query and key-value pooling factors inside attention. Training samples a
//! configuration per step; inference picks one to trade accuracy for cost.

pub mod attention;
pub mod autodiff;
pub mod audio;
pub mod cost;
pub mod ctc;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod pooling;
pub mod stochastic;
pub mod tensor;
pub mod training;
pub mod verify;

pub use autodiff::{Gradients, MacBucket, MacCounts, Tape, Var};
pub use encoder::{Encoder, EncoderConfig};
pub use error::{Error, Result};
pub use stochastic::{CompressionConfig, FactorSets, LayerFactors, Rng, Triplet};
pub use tensor::{Real, Tensor};
