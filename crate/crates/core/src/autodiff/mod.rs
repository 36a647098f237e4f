//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] owns a Wengert list of nodes. Every op that touches a tracked
//! tensor appends one node holding the op kind, its input node ids, and the
//! forward value. [`Tape::backward`] replays the list once, in reverse,
//! accumulating vector-Jacobian products into per-node gradient buffers.
//!
//! One tape per computation. Backward consumes the tape; recording onto a
//! consumed tape panics. Independent tapes may live on separate threads
//! (the tape handle is an `Arc<Mutex<..>>`), but a single tape is never
//! shared across threads here.

mod ops;
mod tape;
mod tensor;

pub use tape::Tape;
pub use tensor::Tensor;
