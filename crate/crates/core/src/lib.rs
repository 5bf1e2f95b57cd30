//! Desk-scale laboratory for language-model unlearning.
//!
//! The crate trains a small double-precision causal LM on a deterministic
//! synthetic question-answering corpus, implements the standard forget and
//! regularization losses for unlearning fine-tuning (gradient ascent,
//! negative preference optimization, rejection-template tuning, direct
//! preference optimization, gradient descent, KL-to-reference, maximum
//! entropy, answer preservation), evaluates checkpoints with a six-metric
//! report aggregated into model utility and forget efficacy, and drives
//! single-task and continual unlearning experiments. All computations are
//! exact-gradient, seed-deterministic, and run offline; optional HTTP
//! backends can replace the lexical metric defaults.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod unlearn;
pub mod vocab;
pub mod xclients;

pub use error::{Error, Result};
