//! Dual knowledge distillation for compact sound event detection.
//!
//! The crate is organized around a from-scratch reverse-mode autodiff
//! tensor core ([`tensor`]), log-mel feature extraction ([`audio`]),
//! the SE-CRNN model family ([`models`]), the distillation training
//! engine ([`train`]), a deterministic synthetic dataset generator
//! ([`synth`]), and event decoding plus detection metrics ([`eval`]).
//!
//! See the runnable programs under `examples/` for end-to-end usage;
//! the `sed` binary wraps the same entry points behind subcommands.

pub mod audio;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod models;
pub mod suite;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Result, SedError};
pub use tensor::Tensor;
