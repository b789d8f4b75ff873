//! Prompt-conditioned diffusion policies for offline multi-task RL.
//!
//! The crate trains a small DDPM-style action sampler conditioned on task
//! prompts (a text description plus a short demonstration trajectory) with
//! an actor–critic objective over offline data, and evaluates zero-shot
//! transfer to held-out tasks in a 2-D point-navigation environment.
//!
//! Everything numeric is hand-rolled f64: explicit forward/backward layers,
//! Adam, the diffusion schedule, and the training loop, so runs are
//! bit-reproducible from a seed on any machine.

pub mod error;
pub mod tensor;

pub mod checkpoint;
pub mod critic;
pub mod data;
pub mod diffusion;
pub mod env;
pub mod eval;
pub mod neural;
pub mod policy;
pub mod prompts;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor2;
