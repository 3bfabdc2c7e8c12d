//! Dual-perspective multi-intent collaborative filtering on implicit
//! feedback: a complete training, evaluation, and intent-analysis
//! engine for bipartite interaction graphs.
//!
//! The model propagates base embeddings one hop over the normalized
//! interaction graph, soft-assigns users and items to two learnable
//! prototype sets from both the user and the item perspective, aligns
//! the resulting intent embeddings per interaction, fuses both
//! perspectives with local structural similarity scores, and trains the
//! scalar relevance head with a temperature-softmax squared-error loss
//! over multiple uniformly sampled negatives.
//!
//! See the `guide` module (rendered from `book/`) for a narrative tour
//! with runnable examples.

#![forbid(unsafe_code)]

pub mod align;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod intent;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
