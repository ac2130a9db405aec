use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Every rejected precondition names what failed.
#[derive(Debug, Error)]
pub enum AfsError {
    #[error("{op}: shape mismatch, left {left:?} vs right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{context}: non-finite value at index {index} ({value})")]
    NonFinite {
        context: &'static str,
        index: usize,
        value: f64,
    },

    #[error("invalid tensor shape {shape:?}: {reason}")]
    BadShape { shape: Vec<usize>, reason: String },

    #[error("{context}: zero-norm vector")]
    ZeroNorm { context: &'static str },

    #[error("{context}: expected scalar, got shape {shape:?}")]
    NotScalar {
        context: &'static str,
        shape: Vec<usize>,
    },

    #[error("invalid config: {reason}")]
    BadConfig { reason: String },

    #[error("{context}: dimension mismatch, expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("gradient check: step must be positive, got {step}")]
    BadStep { step: f64 },

    #[error("mix weights: {which} must be non-negative, got {value} at index {index}")]
    NegativeWeight {
        which: &'static str,
        index: usize,
        value: f64,
    },

    #[error("mix weights: {which} must sum to 1 within 1e-9, got {sum}")]
    OffSimplex { which: &'static str, sum: f64 },

    #[error("{what} must not be empty")]
    Empty { what: &'static str },

    #[error("loss coefficient {which} must be non-negative, got {value}")]
    NegativeLambda { which: &'static str, value: f64 },

    #[error("schedule step {step} out of range 0..={total}")]
    StepOutOfRange { step: u64, total: u64 },

    #[error("non-finite gradient in block {block}")]
    NonFiniteGradient { block: String },

    #[error(
        "training diverged: loss {current} exceeded 10x initial {initial} \
         for {window} consecutive steps (at step {step})"
    )]
    Diverged {
        step: u64,
        initial: f64,
        current: f64,
        window: u64,
    },

    #[error("edit direction is for the {dir_space} space, requested {requested} edit")]
    SpaceMismatch {
        dir_space: &'static str,
        requested: &'static str,
    },

    #[error("alpha {value} outside [0, 1]")]
    AlphaOutOfRange { value: f64 },

    #[error("extractor configs differ in `{field}` (only lambda4 may differ)")]
    ConfigMismatch { field: &'static str },

    #[error("{path}: bad magic, expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{path}: unsupported format version {found}")]
    BadVersion { path: PathBuf, found: u8 },

    #[error("{path}: file truncated while reading {what}")]
    Truncated { path: PathBuf, what: String },

    #[error("{path}: trailing bytes after {what}")]
    TrailingBytes { path: PathBuf, what: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AfsError>;
