//! Hash-grid neural radiance fields with a trainable saliency grid, a
//! zero-skipping density gate and an ADMM sparsity pruner.

pub mod cli;
pub mod config;
pub mod decoder;
pub mod diff_optim;
pub mod error;
pub mod hash_encoding;
pub mod model;
pub mod real;
pub mod render;
pub mod saliency;
pub mod scene_io;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;
