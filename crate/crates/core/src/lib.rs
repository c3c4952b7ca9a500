//! Image-prompt quality assessment at desk scale.
//!
//! Dual-stream encoders feed an attention-pooling fusion module whose visual
//! branch is queried by the pooled patch grid and whose cross-modality branch
//! is queried by the prompt's terminal (`[qa]`) token. Everything runs on a
//! small `f64` reverse-mode tape so every gradient can be checked against
//! finite differences.

mod attention;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod losses_metrics;
pub mod numerics;
pub mod pipelines;
pub mod tokenizer;

pub use error::{Error, Result};
