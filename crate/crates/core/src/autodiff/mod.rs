//! Dense f64 linear algebra with a reverse-mode tape.
//!
//! [`Tensor`] values are immutable and safe to share; a [`Tape`] is
//! single-writer (one training step owns one tape). Gradients of anything
//! recorded on a tape can be validated with [`grad_check`].

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{cosine, Tape, ValueId};
pub use tensor::{cosine_similarity, Tensor};
