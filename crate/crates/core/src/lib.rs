//! Multi-view hashing: per-view normalization, context-gated fusion and a
//! tanh hash head, trained with a block-wise pairwise metric loss plus a
//! quantization loss, and evaluated by exhaustive Hamming ranking.
//!
//! Features come in precomputed (see [`data`]); no backbone network is part
//! of this crate.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod net;
pub mod optim;
pub mod retrieval;
pub mod trainer;
mod rng;

pub use error::{Error, Result};
