//! Desk-scale laboratory for conditional diffusion sampling.

pub mod autodiff;
pub mod error;
pub mod experiments;
pub mod guidance;
pub mod metrics;
pub mod models;
pub mod mixture;
pub mod oracle;
pub mod sampler;
pub mod schedule;
pub mod seeding;

pub use autodiff::{Tape, Tensor};
pub use error::{CoreError, Result};
