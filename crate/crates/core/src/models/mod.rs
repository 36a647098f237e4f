//! Trained stand-ins for the analytic oracle.
//!
//! A small MLP predicts noise from (z, time embedding, class embedding),
//! with a dedicated null-class row so one network serves both the
//! conditional and unconditional roles; a second MLP classifies noised
//! points at every schedule time. Both use a smooth nonlinearity because
//! lookahead guides differentiate through them repeatedly.
//!
//! Training is seeded and single-threaded: identical configs produce
//! bit-identical weights. Trained models are immutable and shared freely
//! across evaluation threads.

mod checkpoint;
mod classifier;
mod eps;
mod mlp;
mod train;

#[cfg(test)]
mod tests;

pub use checkpoint::{Checkpoint, TensorData, CHECKPOINT_VERSION};
pub use classifier::NoisedClassifier;
pub use eps::EpsModel;
pub use mlp::{time_embedding, Mlp};
pub use train::{
    mc_classifier_ce, mc_eps_loss, train_classifier, train_eps, Adam, TrainConfig, TrainOutput,
};
