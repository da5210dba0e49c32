//! Single-shot network pruning by connection sensitivity, on a small
//! reverse-mode autodiff stack.

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod init;
pub mod layers;
pub mod model;
pub mod rng;
pub mod snip;
pub mod tensor;
pub mod trainer;
pub mod viz;

pub use error::{Error, Result};
