//! Additive identity/style decomposition of layered latent codes.
//!
//! A latent code `w` (an `L x d` matrix, one row per generator layer) is split
//! as `w = w_id + w_sty` by a learned per-component style extractor `h`, with
//! `w_sty = h(w)` and `w_id = w - h(w)`. Swapping the identity of a source
//! code onto the style of a target code is then plain vector arithmetic:
//! `w_tilde = w_s - h(w_s) + h(w_t)`.
//!
//! The crate provides:
//! - [`autodiff`]: a small f64 tensor kernel with a reverse-mode tape and
//!   finite-difference gradient checking,
//! - [`world`]: a synthetic generator/embedder stack with a hidden
//!   ground-truth split, used both as training environment and as oracle,
//! - [`extractor`]: the per-component highway-MLP style extractor,
//! - [`algebra`]: swap, multi-swap, chains, code scaling, PCA edit directions,
//! - [`losses`]: the four training losses and their weighted sum,
//! - [`trainer`]: Adam with a cosine schedule, deterministic training,
//!   checkpointing,
//! - [`eval`]: swap metrics and the experiment drivers behind the CLI.

pub mod algebra;
pub mod autodiff;
pub mod eval;
pub mod extractor;
pub mod losses;
pub mod trainer;
pub mod world;

mod binio;
mod error;
pub(crate) mod rngstream;

pub use error::{AfsError, Result};
